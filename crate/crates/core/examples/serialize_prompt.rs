//! Load a CSV through a schema and print prompts for the full row and a coalition.
//!
//! cargo run --example serialize_prompt

use std::path::Path;

use tabattr::attribution::Coalition;
use tabattr::tabular::{build_prompt, load_dataset, parse_feature_string, PromptTemplate, Schema};

fn main() -> tabattr::Result<()> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let schema = Schema::from_json_file(&data.join("adult_schema.json"))?;
    let rows = load_dataset(&data.join("adult_sample.csv"), &schema)?;
    let row = &rows[1];
    let template = PromptTemplate::default();

    println!("{}\n", build_prompt(&template, row.fields())?);

    let keep = Coalition::from_members([0, 2, 5])?;
    let prompt = build_prompt(&template, &row.select(|i| keep.contains(i)))?;
    let block = template.extract_features(&prompt).expect("prompt has an input block");
    println!("coalition {keep:?}: {block}");
    for (key, value) in parse_feature_string(block)? {
        println!("  {key} = {value}");
    }
    Ok(())
}
