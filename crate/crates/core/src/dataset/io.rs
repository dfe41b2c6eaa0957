use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, EntityTable, Label, Post, Result};

/// One line of the posts file.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    text: Vec<usize>,
    image: Option<Vec<f64>>,
    entities: Vec<String>,
    label: u8,
}

/// Result of [`load_dataset`].
#[derive(Clone, Debug)]
pub struct Loaded {
    pub posts: Vec<Post>,
    pub entities: EntityTable,
    /// Records dropped for carrying fewer than two entities.
    pub rejected: usize,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `entity_id<TAB>v1<TAB>...<TAB>vN` lines.
pub fn load_entities(path: &Path) -> Result<EntityTable> {
    let mut table = EntityTable::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(malformed(path, lineno, "empty entity id"));
        }
        let vector = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(path, lineno, format!("bad embedding value: {e}")))?;
        if vector.is_empty() {
            return Err(malformed(path, lineno, "entity has no embedding values"));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(malformed(path, lineno, "non-finite embedding value"));
        }
        table
            .insert(id, vector)
            .map_err(|m| malformed(path, lineno, m))?;
    }
    Ok(table)
}

/// Reads the JSON Lines posts file, resolving entity ids against `entities`.
/// Records with fewer than two entities are skipped and counted.
pub fn load_posts(path: &Path, entities: &EntityTable) -> Result<(Vec<Post>, usize)> {
    let mut posts = Vec::new();
    let mut rejected = 0;
    let mut image_dim: Option<usize> = None;
    for (i, line) in open(path)?.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| malformed(path, lineno, e.to_string()))?;
        if record.text.is_empty() {
            return Err(malformed(path, lineno, "empty token sequence"));
        }
        let label = Label::from_u8(record.label)
            .ok_or_else(|| malformed(path, lineno, format!("label {} is not 0 or 1", record.label)))?;
        if record.entities.len() < 2 {
            rejected += 1;
            continue;
        }
        if let Some(id) = record.entities.iter().find(|id| !entities.contains(id)) {
            return Err(DataError::UnknownEntity {
                path: path.to_path_buf(),
                line: lineno,
                id: id.clone(),
            });
        }
        if let Some(image) = &record.image {
            if image.is_empty() || image.iter().any(|v| !v.is_finite()) {
                return Err(malformed(path, lineno, "image features must be non-empty and finite"));
            }
            match image_dim {
                Some(d) if d != image.len() => {
                    return Err(malformed(
                        path,
                        lineno,
                        format!("image has {} features, earlier records have {d}", image.len()),
                    ))
                }
                _ => image_dim = Some(image.len()),
            }
        }
        posts.push(Post {
            id: record.id,
            tokens: record.text,
            cmt: record.image.is_some(),
            image_features: record.image,
            entity_ids: record.entities,
            label,
        });
    }
    if rejected > 0 {
        log::warn!(
            "{}: rejected {rejected} record(s) with fewer than two entities",
            path.display()
        );
    }
    Ok((posts, rejected))
}

pub fn load_dataset(posts_path: &Path, entities_path: &Path) -> Result<Loaded> {
    let entities = load_entities(entities_path)?;
    let (posts, rejected) = load_posts(posts_path, &entities)?;
    Ok(Loaded {
        posts,
        entities,
        rejected,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| DataError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes posts in the JSON Lines input format. Posts without a real image
/// (`cmt == false`) are written with `"image": null`.
pub fn write_posts(path: &Path, posts: &[Post]) -> Result<()> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = create(path)?;
    for post in posts {
        let record = Record {
            id: post.id.clone(),
            text: post.tokens.clone(),
            image: if post.cmt {
                post.image_features.clone()
            } else {
                None
            },
            entities: post.entity_ids.clone(),
            label: post.label as u8,
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_entities(path: &Path, table: &EntityTable) -> Result<()> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = create(path)?;
    for (id, vector) in table.iter() {
        write!(out, "{id}").map_err(io_err)?;
        for v in vector {
            write!(out, "\t{v}").map_err(io_err)?;
        }
        writeln!(out).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
