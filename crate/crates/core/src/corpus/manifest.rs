use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_segments, Corpus, Segment, Split, Triple};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    image: PathBuf,
    audio_e: PathBuf,
    audio_h: PathBuf,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concepts: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments_e: Option<Vec<Segment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segments_h: Option<Vec<Segment>>,
}

impl From<Record> for Triple {
    fn from(r: Record) -> Self {
        Triple {
            id: r.id,
            image_ref: r.image,
            audio_e_ref: r.audio_e,
            audio_h_ref: r.audio_h,
            split: r.split,
            concepts: r.concepts,
            segments_e: r.segments_e,
            segments_h: r.segments_h,
        }
    }
}

impl From<&Triple> for Record {
    fn from(t: &Triple) -> Self {
        Record {
            id: t.id.clone(),
            image: t.image_ref.clone(),
            audio_e: t.audio_e_ref.clone(),
            audio_h: t.audio_h_ref.clone(),
            split: t.split,
            concepts: t.concepts.clone(),
            segments_e: t.segments_e.clone(),
            segments_h: t.segments_h.clone(),
        }
    }
}

/// Load and validate a JSON Lines manifest. Media paths are resolved
/// relative to the manifest's directory and must name readable files.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::ManifestLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        for segs in [&record.segments_e, &record.segments_h].into_iter().flatten() {
            check_segments(segs).map_err(|message| Error::ManifestLine {
                line: i + 1,
                message,
            })?;
        }
        triples.push(Triple::from(record));
    }
    if triples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let corpus = Corpus::new(root, triples)?;
    for t in &corpus.triples {
        for rel in [&t.image_ref, &t.audio_e_ref, &t.audio_h_ref] {
            let full = corpus.resolve(rel);
            if fs::File::open(&full).is_err() || !full.is_file() {
                return Err(Error::MissingFile {
                    id: t.id.clone(),
                    path: full,
                });
            }
        }
    }
    Ok(corpus)
}

/// Write `corpus` as JSON Lines to `path`.
pub fn write_manifest(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for t in &corpus.triples {
        serde_json::to_writer(&mut out, &Record::from(t)).map_err(|e| Error::Serde(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        fs::write(dir.join(name), b"x").unwrap();
    }

    fn line(id: &str, split: &str) -> String {
        format!(
            r#"{{"id":"{id}","image":"{id}.png","audio_e":"{id}_e.wav","audio_h":"{id}_h.wav","split":"{split}"}}"#
        )
    }

    fn setup(ids: &[&str]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for id in ids {
            touch(dir.path(), &format!("{id}.png"));
            touch(dir.path(), &format!("{id}_e.wav"));
            touch(dir.path(), &format!("{id}_h.wav"));
        }
        dir
    }

    #[test]
    fn counts_splits() {
        let dir = setup(&["a", "b"]);
        let p = dir.path().join("m.jsonl");
        fs::write(&p, format!("{}\n{}\n", line("a", "train"), line("b", "val"))).unwrap();
        let c = load_manifest(&p).unwrap();
        assert_eq!((c.n_train, c.n_val), (1, 1));
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "").unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert_eq!(err.to_string(), "empty manifest");
    }

    #[test]
    fn missing_audio_names_id_and_path() {
        let dir = setup(&["a"]);
        fs::remove_file(dir.path().join("a_h.wav")).unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, line("a", "train")).unwrap();
        let msg = load_manifest(&p).unwrap_err().to_string();
        assert!(msg.contains("\"a\"") && msg.contains("a_h.wav"), "{msg}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = setup(&["a"]);
        let p = dir.path().join("m.jsonl");
        fs::write(&p, format!("{}\n{{not json\n", line("a", "train"))).unwrap();
        match load_manifest(&p).unwrap_err() {
            Error::ManifestLine { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        fs::write(&p, line("a", "test")).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::ManifestLine { line: 1, .. })));
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = setup(&["a"]);
        let p = dir.path().join("m.jsonl");
        fs::write(&p, format!("{}\n{}\n", line("a", "train"), line("a", "val"))).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn overlapping_segments_are_rejected() {
        let dir = setup(&["a"]);
        let p = dir.path().join("m.jsonl");
        let rec = r#"{"id":"a","image":"a.png","audio_e":"a_e.wav","audio_h":"a_h.wav","split":"train","segments_e":[[1,0.0,0.5],[2,0.4,0.8]]}"#;
        fs::write(&p, rec).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::ManifestLine { line: 1, .. })));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = setup(&["a", "b"]);
        let triples = vec![
            Triple {
                id: "a".into(),
                image_ref: "a.png".into(),
                audio_e_ref: "a_e.wav".into(),
                audio_h_ref: "a_h.wav".into(),
                split: Split::Train,
                concepts: Some(vec![3, 1]),
                segments_e: Some(vec![Segment { concept: 3, start_s: 0.05, end_s: 0.35 }]),
                segments_h: Some(vec![Segment { concept: 1, start_s: 0.1, end_s: 0.2 }]),
            },
            Triple {
                id: "b".into(),
                image_ref: "b.png".into(),
                audio_e_ref: "b_e.wav".into(),
                audio_h_ref: "b_h.wav".into(),
                split: Split::Val,
                concepts: None,
                segments_e: None,
                segments_h: None,
            },
        ];
        let corpus = Corpus::new(dir.path(), triples).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        write_manifest(&corpus, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), corpus);
    }
}
