use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GrammarConfig, HarnessError};
use crate::diffcore::Tensor;
use crate::metrics::porter_stem;
use crate::model::BatchItem;
use crate::rewards::{critic_boundaries, CriticRule, SegmentBoundaries};
use crate::tokens::{TokenId, TokenSequence, Vocab};

pub const DATASET_MAGIC: [u8; 8] = *b"BMHRLDS\0";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub audio: Tensor,
    pub video: Tensor,
    /// Content tokens, no markers.
    pub caption: TokenSequence,
    pub boundaries: SegmentBoundaries,
    pub video_class: u32,
    pub audio_class: u32,
}

impl SyntheticSample {
    pub fn item(&self) -> BatchItem<'_> {
        BatchItem { audio: &self.audio, video: &self.video, caption: &self.caption }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub delimiters: Vec<String>,
    pub d_audio: usize,
    pub d_video: usize,
    pub samples: Vec<SyntheticSample>,
}

/// Lowercase consonant-vowel pseudo-words, each its own Porter stem and
/// with pairwise distinct stems, in a fixed order.
pub fn pseudo_words(n: usize, exclude: &[&str]) -> Vec<String> {
    const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
    const VOWELS: &[u8] = b"aiou";
    let mut out = Vec::with_capacity(n);
    let mut stems = std::collections::HashSet::new();
    'outer: for syllables in 2usize.. {
        let per = CONSONANTS.len() * VOWELS.len();
        let total = per.pow(syllables as u32);
        for mut k in 0..total {
            let mut w = String::with_capacity(2 * syllables);
            for _ in 0..syllables {
                let s = k % per;
                k /= per;
                w.push(CONSONANTS[s / VOWELS.len()] as char);
                w.push(VOWELS[s % VOWELS.len()] as char);
            }
            let stem = porter_stem(&w);
            if stem == w && !exclude.contains(&w.as_str()) && stems.insert(stem) {
                out.push(w);
                if out.len() == n {
                    break 'outer;
                }
            }
        }
    }
    out
}

/// The grammar's lexicon: per-class clause words plus the delimiter.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub vocab: Vocab,
    pub subjects: Vec<Vec<TokenId>>,
    pub actions: Vec<Vec<TokenId>>,
    pub delimiter: TokenId,
}

impl Lexicon {
    pub fn new(cfg: &GrammarConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let n_words = cfg.vocab_size - 4;
        let words = pseudo_words(n_words, &[cfg.delimiter.as_str()]);
        let mut all = vec![cfg.delimiter.clone()];
        all.extend(words);
        let vocab = Vocab::new(all);
        let id = |i: usize| (4 + i) as TokenId;
        let subjects = (0..cfg.video_classes)
            .map(|c| (0..cfg.subject_len).map(|j| id(c * cfg.subject_len + j)).collect())
            .collect();
        let offset = cfg.video_classes * cfg.subject_len;
        let actions = (0..cfg.audio_classes)
            .map(|c| (0..cfg.action_len).map(|j| id(offset + c * cfg.action_len + j)).collect())
            .collect();
        Ok(Lexicon { vocab, subjects, actions, delimiter: 3 })
    }

    pub fn caption(&self, video_class: usize, audio_class: usize) -> TokenSequence {
        let mut ids = self.subjects[video_class].clone();
        ids.push(self.delimiter);
        ids.extend(&self.actions[audio_class]);
        TokenSequence(ids)
    }
}

fn prototypes(rng: &mut ChaCha8Rng, classes: usize, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes).map(|_| (0..len * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Deterministic synthetic dataset: the subject clause is a function of the
/// video class and the action clause of the audio class; features are the
/// class prototypes plus Gaussian jitter.
pub fn gen_dataset(cfg: &GrammarConfig, seed: u64) -> Result<Dataset, HarnessError> {
    let lex = Lexicon::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let video_protos = prototypes(&mut rng, cfg.video_classes, cfg.video_len, cfg.d_video);
    let audio_protos = prototypes(&mut rng, cfg.audio_classes, cfg.audio_len, cfg.d_audio);
    let noise = Normal::new(0.0, cfg.jitter).map_err(|e| HarnessError::Config(e.to_string()))?;
    let critic = CriticRule::new([cfg.delimiter.as_str()]);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let vc = rng.random_range(0..cfg.video_classes);
        let ac = rng.random_range(0..cfg.audio_classes);
        let mut jittered = |proto: &[f64]| -> Vec<f64> {
            proto.iter().map(|v| if cfg.jitter > 0.0 { v + noise.sample(&mut rng) } else { *v }).collect()
        };
        let video = Tensor::matrix(cfg.video_len, cfg.d_video, jittered(&video_protos[vc]))?;
        let audio = Tensor::matrix(cfg.audio_len, cfg.d_audio, jittered(&audio_protos[ac]))?;
        let caption = lex.caption(vc, ac);
        let boundaries = critic_boundaries(&lex.vocab.surfaces(&caption), &critic)?;
        samples.push(SyntheticSample { audio, video, caption, boundaries, video_class: vc as u32, audio_class: ac as u32 });
    }
    Ok(Dataset {
        vocab: lex.vocab,
        delimiters: vec![cfg.delimiter.clone()],
        d_audio: cfg.d_audio,
        d_video: cfg.d_video,
        samples,
    })
}

impl Dataset {
    pub fn critic(&self) -> CriticRule {
        CriticRule::new(self.delimiters.iter().map(String::as_str))
    }

    /// Vocabulary ids of the delimiter words.
    pub fn delimiter_ids(&self) -> Vec<TokenId> {
        self.delimiters.iter().filter_map(|d| self.vocab.id(d)).collect()
    }

    /// Seeded 80/20-style split into (train, held-out) index lists.
    pub fn split(&self, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5eed_5911);
        idx.shuffle(&mut rng);
        let n_val = ((self.samples.len() as f64) * val_fraction).round() as usize;
        let n_val = n_val.min(self.samples.len().saturating_sub(1));
        let val = idx.split_off(self.samples.len() - n_val);
        (idx, val)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        let mut put = |b: &[u8]| w.write_all(b);
        put(&DATASET_MAGIC)?;
        put(&DATASET_VERSION.to_le_bytes())?;
        put(&(self.d_audio as u64).to_le_bytes())?;
        put(&(self.d_video as u64).to_le_bytes())?;
        let put_words = |put: &mut dyn FnMut(&[u8]) -> std::io::Result<()>, words: &[String]| -> std::io::Result<()> {
            put(&(words.len() as u64).to_le_bytes())?;
            for word in words {
                put(&(word.len() as u32).to_le_bytes())?;
                put(word.as_bytes())?;
            }
            Ok(())
        };
        put_words(&mut put, self.vocab.words())?;
        put_words(&mut put, &self.delimiters)?;
        put(&(self.samples.len() as u64).to_le_bytes())?;
        for s in &self.samples {
            for t in [&s.audio, &s.video] {
                put(&(t.rows() as u64).to_le_bytes())?;
                for v in t.data() {
                    put(&v.to_le_bytes())?;
                }
            }
            put(&(s.caption.len() as u64).to_le_bytes())?;
            for id in s.caption.ids() {
                put(&id.to_le_bytes())?;
            }
            put(&(s.boundaries.starts().len() as u64).to_le_bytes())?;
            for &b in s.boundaries.starts() {
                put(&(b as u64).to_le_bytes())?;
            }
            put(&s.video_class.to_le_bytes())?;
            put(&s.audio_class.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Data(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != DATASET_MAGIC {
            return Err(bad("not a dataset file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(bad(format!("unsupported dataset version {version}")));
        }
        let d_audio = read_u64(&mut r)? as usize;
        let d_video = read_u64(&mut r)? as usize;
        let words = read_words(&mut r)?;
        let vocab = Vocab::from_full_list(words).ok_or_else(|| bad("vocabulary lacks the special markers".into()))?;
        let delimiters = read_words(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let mut samples = Vec::with_capacity(n.min(1 << 20));
        for i in 0..n {
            let mut mats = Vec::with_capacity(2);
            for dim in [d_audio, d_video] {
                let rows = read_u64(&mut r)? as usize;
                let data = (0..rows * dim).map(|_| read_u64(&mut r).map(f64::from_bits)).collect::<Result<Vec<_>, _>>()?;
                mats.push(Tensor::matrix(rows, dim, data)?);
            }
            let len = read_u64(&mut r)? as usize;
            let caption = TokenSequence((0..len).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>, _>>()?);
            if let Some(&t) = caption.ids().iter().find(|&&t| t as usize >= vocab.len()) {
                return Err(bad(format!("sample {i}: token {t} outside the vocabulary")));
            }
            let nb = read_u64(&mut r)? as usize;
            let starts = (0..nb).map(|_| read_u64(&mut r).map(|b| b as usize)).collect::<Result<Vec<_>, _>>()?;
            let boundaries =
                SegmentBoundaries::new(starts, len).map_err(|e| bad(format!("sample {i}: {e}")))?;
            let video_class = read_u32(&mut r)?;
            let audio_class = read_u32(&mut r)?;
            let video = mats.pop().expect("two matrices");
            let audio = mats.pop().expect("two matrices");
            samples.push(SyntheticSample { audio, video, caption, boundaries, video_class, audio_class });
        }
        Ok(Dataset { vocab, delimiters, d_audio, d_video, samples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::read(BufReader::new(f))
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, HarnessError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, HarnessError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_words<R: Read>(r: &mut R) -> Result<Vec<String>, HarnessError> {
    let n = read_u64(r)? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = read_u32(r)? as usize;
        let mut b = vec![0u8; len];
        r.read_exact(&mut b)?;
        out.push(String::from_utf8(b).map_err(|_| HarnessError::Data("word is not UTF-8".into()))?);
    }
    Ok(out)
}
