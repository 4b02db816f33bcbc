//! Writes a model file, reads it back, and checks the round trip is bit-exact.

use gacunet::model::{load_model, save_model, Container, Model, ModelSpec, Variant};

fn main() -> gacunet::Result<()> {
    let spec = ModelSpec::new(Variant::GacUnet, 32, vec![4, 8]).with_seed(9);
    let model = Model::<f32>::build(spec)?;
    let dir = std::env::temp_dir().join("gacunet-save-load");
    std::fs::create_dir_all(&dir).map_err(|e| gacunet::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join("model.gacm");
    save_model(&model, &path)?;

    let back = load_model::<f32>(&path)?;
    let bytes = model.to_bytes();
    let text = model.spec().to_text();
    println!("{}", text.trim_end());
    println!(
        "{} bytes = {} header + {} parameters x 4",
        bytes.len(),
        Container::header_len(text.len()),
        model.param_count()
    );
    println!("checksum {}", model.checksum());
    println!("round trip identical: {}", back.to_bytes() == bytes);
    // A 64-bit reader rejects a 32-bit file rather than converting it.
    println!("load as f64: {}", load_model::<f64>(&path).unwrap_err());
    Ok(())
}
