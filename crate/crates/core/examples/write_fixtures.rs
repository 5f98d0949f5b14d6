//! Regenerates the JSON files under `fixtures/`.

use infosell::fixtures;

fn main() -> infosell::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    fixtures::illustrative_single_type().save(dir.join("illustrative.json"))?;
    fixtures::illustrative_two_type().save(dir.join("illustrative_two_type.json"))?;
    fixtures::full_information_premium().save(dir.join("premium.json"))?;
    let proto = serde_json::to_string_pretty(&fixtures::illustrative_protocol()).expect("serializes");
    std::fs::write(dir.join("illustrative_protocol.json"), proto + "\n")?;
    Ok(())
}
