//! Record backend responses to a replay file and serve them offline.
//!
//! cargo run --example replay_backend

use tabattr::backend::{LogprobBackend, RecordingBackend, ReplayBackend, SyntheticOracle, SyntheticOracleSpec};
use tabattr::tabular::{build_prompt, PromptTemplate};
use tabattr::Error;

fn main() -> tabattr::Result<()> {
    let spec = SyntheticOracleSpec::binary([("x", 1.0), ("y", -0.5)].map(|(k, w)| (k.to_string(), w)), 0.2);
    let oracle = SyntheticOracle::new(spec)?;
    let inst = oracle.generate_instances(1, 0).remove(0);
    let template = PromptTemplate::default();
    let prompts = [
        build_prompt(&template, inst.fields())?,
        build_prompt(&template, &inst.select(|i| i == 0))?,
    ];

    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let path = dir.path().join("replay.json");
    {
        let recorder = RecordingBackend::open(oracle, &path)?;
        for p in &prompts {
            recorder.query(p, 5)?;
        }
        println!("recorded {} responses to {}", recorder.recorded(), path.display());
    }

    let replay = ReplayBackend::open(&path)?;
    for p in &prompts {
        let d = replay.query(p, 5)?;
        println!("{:?}", d.entries());
    }
    match replay.query("never seen", 5) {
        Err(e) => println!("miss: {e}"),
        Ok(_) => println!("unexpected hit"),
    }
    Ok(())
}
