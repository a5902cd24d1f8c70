//! Resolves tag text embeddings from the seeded provider and saves them with
//! the schema.

use vfmdet::vatt2vec::{get_text_embeddings, AttributeSchema, EmbeddingProvider, TextEmbeddingTable};

fn main() -> anyhow::Result<()> {
    let schema = AttributeSchema::vehicle();
    let table = get_text_embeddings(&schema, &EmbeddingProvider::Seeded { seed: 0, dim: 64 })?;
    std::fs::create_dir_all("out")?;
    let path = std::path::Path::new("out/embeddings.tsv");
    table.save(path)?;
    let back = TextEmbeddingTable::load(path, &schema)?;
    assert_eq!(back.hash(), table.hash());
    for (g, r) in schema.groups.iter().zip(schema.group_ranges()) {
        println!("{:<18} {} tags, rows {r:?}", g.name, g.tags.len());
    }
    println!("{} x {}, sha256 {}", table.rows(), table.dim, table.hash());
    Ok(())
}
