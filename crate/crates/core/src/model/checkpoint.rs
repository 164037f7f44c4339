//! Checkpoint directory: `model.txt` (configuration plus a named-offset
//! index), `params.bin` (little-endian `f64` blob) and `vocab.tsv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CaptionerModel, ModelConfig};
use crate::data::Vocabulary;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "model.txt";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.tsv";

const PARAMS_HEADER: &str = "[params]";

pub fn save_checkpoint(model: &CaptionerModel, vocab: &Vocabulary, dir: &Path) -> Result<()> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    let mut manifest = String::new();
    for (k, v) in model.config().to_pairs() {
        let _ = writeln!(manifest, "{k} = {v}");
    }
    let _ = writeln!(manifest, "{PARAMS_HEADER}");
    let store = model.params();
    let mut blob = Vec::with_capacity(store.numel() * 8);
    let mut offset = 0;
    for id in store.ids() {
        let t = store.get(id);
        let shape = t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        let _ = writeln!(manifest, "{}\t{offset}\t{}\t{shape}", store.name(id), t.numel());
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        offset += t.numel();
    }

    write(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    write(&dir.join(PARAMS_FILE), &blob)?;
    write(&dir.join(VOCAB_FILE), vocab.to_tsv().as_bytes())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn load_checkpoint(dir: &Path) -> Result<(CaptionerModel, Vocabulary)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = String::from_utf8(read(&manifest_path)?)
        .map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", manifest_path.display())))?;
    let parse_err = |line: usize, msg: &str| Error::Parse {
        path: manifest_path.clone(),
        line,
        msg: msg.to_owned(),
    };

    let mut pairs = BTreeMap::new();
    let mut index = Vec::new();
    let mut in_params = false;
    for (i, line) in manifest.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line == PARAMS_HEADER {
            in_params = true;
            continue;
        }
        if in_params {
            let cols: Vec<&str> = line.split('\t').collect();
            let [name, offset, len, shape] = cols[..] else {
                return Err(parse_err(lineno, "expected `name<TAB>offset<TAB>len<TAB>shape`"));
            };
            let offset: usize = offset.parse().map_err(|_| parse_err(lineno, "bad offset"))?;
            let len: usize = len.parse().map_err(|_| parse_err(lineno, "bad length"))?;
            let shape = shape
                .split('x')
                .map(str::parse)
                .collect::<Result<Vec<usize>, _>>()
                .map_err(|_| parse_err(lineno, "bad shape"))?;
            index.push((name.to_owned(), offset, len, shape));
        } else {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(lineno, "expected `key = value`"))?;
            pairs.insert(k.trim().to_owned(), v.trim().to_owned());
        }
    }

    let config = ModelConfig::from_pairs(&pairs)?;
    let mut model = CaptionerModel::new(config, 0)?;

    let blob = read(&dir.join(PARAMS_FILE))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{PARAMS_FILE} length {} is not a multiple of 8",
            blob.len()
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();

    let store = model.params_mut();
    if index.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "index lists {} tensors, configuration implies {}",
            index.len(),
            store.len()
        )));
    }
    let mut expected_offset = 0;
    for (&(ref name, offset, len, ref shape), id) in index.iter().zip(store.ids().collect::<Vec<_>>()) {
        if store.name(id) != name {
            return Err(Error::Checkpoint(format!(
                "expected tensor `{}`, found `{name}`",
                store.name(id)
            )));
        }
        let t = store.get_mut(id);
        if t.shape() != shape.as_slice() || t.numel() != len || offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has inconsistent shape or offset"
            )));
        }
        let src = values
            .get(offset..offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("{PARAMS_FILE} too short for `{name}`")))?;
        t.data_mut().copy_from_slice(src);
        expected_offset += len;
    }
    if expected_offset != values.len() {
        return Err(Error::Checkpoint(format!(
            "{PARAMS_FILE} holds {} values, index covers {expected_offset}",
            values.len()
        )));
    }

    let vocab_path = dir.join(VOCAB_FILE);
    let text = String::from_utf8(read(&vocab_path)?)
        .map_err(|_| Error::Checkpoint(format!("{} is not UTF-8", vocab_path.display())))?;
    let vocab = Vocabulary::from_tsv(&text, &vocab_path)?;
    if vocab.len() != model.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    Ok((model, vocab))
}
