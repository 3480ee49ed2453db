use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{KnowledgeGraph, Split, Triple, Vocab};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabMode {
    /// Unseen names get fresh ids.
    Extend,
    /// Unseen entity names are rejected.
    Strict,
}

/// Reads tab-separated `subject relation object` lines.
pub fn load_triples(path: &Path, vocab: &mut Vocab, mode: VocabMode) -> Result<Vec<Triple>> {
    let file = File::open(path)?;
    parse_triples(BufReader::new(file), path, vocab, mode)
}

/// Parses triples from any reader; `path` is only used in error messages.
pub fn parse_triples<R: BufRead>(
    reader: R,
    path: &Path,
    vocab: &mut Vocab,
    mode: VocabMode,
) -> Result<Vec<Triple>> {
    if vocab.is_augmented() {
        return Err(Error::State("cannot load triples into an augmented vocabulary".into()));
    }
    let mut triples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [s, r, o] = fields[..] else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let mut entity = |name: &str| -> Result<usize> {
            match (mode, vocab.entities.id(name)) {
                (_, Some(id)) => Ok(id),
                (VocabMode::Strict, None) => Err(Error::Vocab {
                    kind: "entity",
                    name: name.to_owned(),
                }),
                (VocabMode::Extend, None) => Ok(vocab.entities.intern(name)),
            }
        };
        let subject = entity(s)?;
        let object = entity(o)?;
        let relation = vocab.relations.intern(r);
        triples.push(Triple::new(subject, relation, object));
    }
    Ok(triples)
}

pub fn write_triples(path: &Path, triples: &[Triple], vocab: &Vocab) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in triples {
        writeln!(
            out,
            "{}\t{}\t{}",
            vocab.entity_name(t.subject),
            vocab.relation_name(t.relation),
            vocab.entity_name(t.object)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the raw splits as `train.txt`, `valid.txt`, `test.txt`.
pub fn write_dataset(dir: &Path, kg: &KnowledgeGraph) -> Result<()> {
    fs::create_dir_all(dir)?;
    for split in Split::ALL {
        write_triples(&dir.join(split.file_name()), kg.split(split), kg.vocab())?;
    }
    Ok(())
}
