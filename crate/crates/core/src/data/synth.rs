use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureStore, RawCaption, Split};
use crate::error::{Error, Result};

const COLORS: [&str; 16] = [
    "red", "blue", "green", "yellow", "black", "white", "brown", "orange", "purple", "pink", "gray", "golden",
    "silver", "dark", "pale", "bright",
];
const OBJECTS: [&str; 16] = [
    "cat", "dog", "bird", "horse", "cow", "sheep", "bear", "zebra", "giraffe", "elephant", "man", "woman", "boy",
    "girl", "train", "bus",
];
const ACTIONS: [&str; 16] = [
    "sitting", "standing", "running", "walking", "sleeping", "eating", "jumping", "playing", "resting", "waiting",
    "looking", "lying", "riding", "flying", "swimming", "climbing",
];
const PLACES: [&str; 16] = [
    "park", "field", "street", "beach", "kitchen", "room", "garden", "road", "forest", "river", "snow", "grass",
    "yard", "table", "bench", "city",
];

/// Sentence shapes; the template index is part of the latent state, so the
/// word order of every caption is recoverable from its image features.
const TEMPLATES: [&str; 3] = [
    "a {c} {o} is {a} in the {p}",
    "the {o} {a} near the {p} is {c}",
    "there is a {c} {o} {a} on the {p} with a {c} {o} nearby",
];

pub const MAX_GRAMMAR_SIZE: usize = 16;

/// Output of [`synth_corpus`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub captions: Vec<RawCaption>,
    pub features: FeatureStore,
    pub splits: BTreeMap<String, Split>,
}

/// Generates `n_images` synthetic images with one caption each.
///
/// Each image draws a color, object, action, place (from the first
/// `grammar_size` entries of each word list) and a template. Its feature
/// vector is the concatenation of one-hot codes for those five choices,
/// so `D = 4 * grammar_size + 3`. Every eighth image goes to the
/// validation split.
pub fn synth_corpus(seed: u64, n_images: usize, grammar_size: usize) -> Result<SynthCorpus> {
    if n_images == 0 {
        return Err(Error::Contract("n_images must be positive".into()));
    }
    if grammar_size == 0 || grammar_size > MAX_GRAMMAR_SIZE {
        return Err(Error::Contract(format!(
            "grammar_size must be in 1..={MAX_GRAMMAR_SIZE}, got {grammar_size}"
        )));
    }
    let g = grammar_size;
    let dim = 4 * g + TEMPLATES.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut captions = Vec::with_capacity(n_images);
    let mut features = FeatureStore::new(dim);
    let mut splits = BTreeMap::new();

    for i in 0..n_images {
        let id = format!("img{i:04}");
        let (c, o, a, p) = (
            rng.gen_range(0..g),
            rng.gen_range(0..g),
            rng.gen_range(0..g),
            rng.gen_range(0..g),
        );
        let tpl = rng.gen_range(0..TEMPLATES.len());
        let text = TEMPLATES[tpl]
            .replace("{c}", COLORS[c])
            .replace("{o}", OBJECTS[o])
            .replace("{a}", ACTIONS[a])
            .replace("{p}", PLACES[p]);

        let mut f = vec![0.0; dim];
        f[c] = 1.0;
        f[g + o] = 1.0;
        f[2 * g + a] = 1.0;
        f[3 * g + p] = 1.0;
        f[4 * g + tpl] = 1.0;
        features.insert(id.clone(), f)?;
        captions.push(RawCaption {
            image_id: id.clone(),
            text,
        });
        let split = if i % 8 == 7 { Split::Val } else { Split::Train };
        splits.insert(id, split);
    }
    Ok(SynthCorpus {
        captions,
        features,
        splits,
    })
}
