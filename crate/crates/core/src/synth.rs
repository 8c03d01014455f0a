//! Synthetic "lipreading" corpora: each character is rendered as its own binary texture for a
//! few frames, so the frames-to-text problem exercises the full pipeline at desk scale.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry};
use crate::roi::{landmarks_to_csv, neutral_reference, LandmarkFrame, VideoU8, ROI_SIZE};
use crate::tokenizer::{normalize_for, Vocabulary};

/// Pseudo-Spanish lexicon in rank order (rank 1 first). Several entries contain doubled
/// letters, which a frame-level decoder can only emit with a blank in between.
#[rustfmt::skip]
pub const LEXICON: [&str; 200] = [
    "de", "la", "que", "el", "en", "y", "a", "los", "se", "del",
    "las", "un", "por", "con", "no", "una", "su", "para", "es", "al",
    "lo", "como", "más", "pero", "sus", "le", "ya", "o", "este", "sí",
    "porque", "esta", "entre", "cuando", "muy", "sin", "sobre", "también", "me", "hasta",
    "hay", "donde", "quien", "desde", "todo", "nos", "durante", "todos", "uno", "les",
    "ni", "contra", "otros", "ese", "eso", "ante", "ellos", "e", "esto", "mí",
    "antes", "algunos", "qué", "unos", "yo", "otro", "otras", "otra", "él", "tanto",
    "esa", "estos", "mucho", "quienes", "nada", "muchos", "cual", "poco", "ella", "estar",
    "estas", "algunas", "algo", "nosotros", "mi", "mis", "tú", "te", "ti", "tu",
    "calle", "perro", "tierra", "allí", "carro", "gallo", "cerrar", "arroz", "silla", "llevar",
    "caballo", "pollo", "torre", "guerra", "sierra", "correr", "acción", "leer", "creer", "niño",
    "año", "mañana", "señor", "españa", "pequeño", "sueño", "compañía", "montaña", "baño", "caña",
    "casa", "tiempo", "vida", "mundo", "país", "día", "gobierno", "parte", "forma", "lugar",
    "trabajo", "momento", "ciudad", "agua", "historia", "noche", "ley", "mujer", "hombre", "madre",
    "padre", "hijo", "amigo", "libro", "mesa", "puerta", "camino", "fuego", "cielo", "mar",
    "sol", "luna", "verde", "rojo", "azul", "blanco", "negro", "grande", "nuevo", "viejo",
    "bueno", "malo", "largo", "corto", "alto", "bajo", "rápido", "lento", "fácil", "difícil",
    "hablar", "comer", "vivir", "dormir", "pensar", "decir", "hacer", "poder", "querer", "saber",
    "venir", "salir", "volver", "llegar", "llamar", "pasar", "dejar", "seguir", "encontrar", "sentir",
    "música", "película", "número", "última", "público", "político", "económico", "güero", "pingüino", "cigüeña",
];

/// Where utterance texts come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TextSource {
    /// Words drawn from [`LEXICON`] with `P(rank) ∝ rank^-exponent`.
    Zipf { exponent: f64 },
    /// Explicit sentences, cycled in order.
    Sentences(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub utterances: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    pub frames_per_char: usize,
    pub frame_size: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_std: f64,
    pub source: TextSource,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            utterances: 20,
            min_chars: 8,
            max_chars: 24,
            frames_per_char: 3,
            frame_size: ROI_SIZE,
            noise_std: 8.0,
            source: TextSource::Zipf { exponent: 1.0 },
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.utterances == 0 || self.frames_per_char == 0 || self.frame_size == 0 {
            return Err(Error::invalid("utterance count, frames per character and frame size must be positive"));
        }
        if self.min_chars == 0 || self.min_chars > self.max_chars {
            return Err(Error::invalid("need 1 ≤ min_chars ≤ max_chars"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise standard deviation must be finite and ≥ 0"));
        }
        match &self.source {
            TextSource::Zipf { exponent } if !(*exponent > 0.0) => {
                Err(Error::invalid("zipf exponent must be positive"))
            }
            TextSource::Sentences(s) if s.is_empty() => Err(Error::invalid("sentence list is empty")),
            _ => Ok(()),
        }
    }
}

/// Spatial frequencies (cycles per frame) of each symbol's texture, indexed by token id.
pub fn pattern_frequencies(count: usize) -> Vec<(u32, u32)> {
    let mut pairs: Vec<(u32, u32)> = (0..8)
        .flat_map(|fx| (0..8).map(move |fy| (fx, fy)))
        .filter(|&p| p != (0, 0))
        .collect();
    pairs.sort_by_key(|&(fx, fy)| (fx + fy, fx));
    pairs.truncate(count);
    pairs
}

/// Binary texture `sign(cos(2π fx x′/S)·cos(2π fy y′/S))` with coordinates centered on the
/// frame, so every texture is mirror-symmetric. Values are `lo` or `hi`.
pub fn render_pattern(freq: (u32, u32), size: usize, lo: u8, hi: u8) -> Vec<u8> {
    let c = (size as f64 - 1.0) / 2.0;
    let wave = |f: u32, u: usize| (2.0 * PI * f as f64 * (u as f64 - c) / size as f64).cos();
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let wy = wave(freq.1, y);
        for x in 0..size {
            out.push(if wave(freq.0, x) * wy >= 0.0 { hi } else { lo });
        }
    }
    out
}

pub const PATTERN_LO: u8 = 64;
pub const PATTERN_HI: u8 = 192;

/// One rendered texture per vocabulary symbol.
pub fn symbol_patterns(vocab: &Vocabulary, size: usize) -> Vec<Vec<u8>> {
    pattern_frequencies(vocab.len())
        .into_iter()
        .map(|f| render_pattern(f, size, PATTERN_LO, PATTERN_HI))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedUtterance {
    pub video: VideoU8,
    pub landmarks: Vec<LandmarkFrame>,
    pub transcript: String,
}

/// Renders `text` as `frames_per_char` frames per character plus seeded noise. Landmarks are
/// the neutral reference on every frame.
pub fn render_utterance(
    text: &str,
    vocab: &Vocabulary,
    spec: &SynthSpec,
    seed: u64,
) -> Result<RenderedUtterance> {
    let ids = vocab.encode(text)?;
    if ids.is_empty() {
        return Err(Error::invalid("cannot render an empty transcript"));
    }
    let patterns = symbol_patterns(vocab, spec.frame_size);
    let frames = ids.len() * spec.frames_per_char;
    let mut data = Vec::with_capacity(frames * spec.frame_size * spec.frame_size);
    for &id in ids.iter() {
        for _ in 0..spec.frames_per_char {
            data.extend_from_slice(&patterns[id]);
        }
    }
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.noise_std).expect("validated noise level");
        for px in &mut data {
            let v = *px as f64 + normal.sample(&mut rng);
            *px = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    let video = VideoU8::new(frames, spec.frame_size, spec.frame_size, data)?;
    let reference = if spec.frame_size == ROI_SIZE {
        neutral_reference()
    } else {
        let s = spec.frame_size as f64 / ROI_SIZE as f64;
        LandmarkFrame::new(neutral_reference().points().iter().map(|p| [p[0] * s, p[1] * s]).collect())?
    };
    Ok(RenderedUtterance {
        video,
        landmarks: vec![reference; frames],
        transcript: text.to_string(),
    })
}

fn utterance_rng(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index as u64 + purpose);
    rng
}

/// Noise seed of utterance `index`; text sampling uses an independent stream.
pub fn noise_seed(seed: u64, index: usize) -> u64 {
    utterance_rng(seed, index, 1).random()
}

fn sample_zipf_text(rng: &mut ChaCha8Rng, zipf: &Zipf<f64>, min: usize, max: usize) -> String {
    let mut text = String::new();
    let mut len = 0;
    let mut misses = 0;
    while len < min && misses < 100 {
        let word = LEXICON[zipf.sample(rng) as usize - 1];
        let wl = word.chars().count();
        let added = if len == 0 { wl } else { wl + 1 };
        if len + added > max {
            misses += 1;
            continue;
        }
        if len > 0 {
            text.push(' ');
        }
        text.push_str(word);
        len += added;
    }
    text
}

/// The normalized transcripts of every utterance in `spec`, in order.
pub fn sample_texts(spec: &SynthSpec, vocab: &Vocabulary) -> Result<Vec<String>> {
    spec.validate()?;
    match &spec.source {
        TextSource::Zipf { exponent } => {
            let zipf = Zipf::new(LEXICON.len() as f64, *exponent)
                .map_err(|e| Error::invalid(format!("zipf sampler: {e}")))?;
            Ok((0..spec.utterances)
                .into_par_iter()
                .map(|i| {
                    let mut rng = utterance_rng(spec.seed, i, 0);
                    sample_zipf_text(&mut rng, &zipf, spec.min_chars, spec.max_chars)
                })
                .collect())
        }
        TextSource::Sentences(sentences) => (0..spec.utterances)
            .map(|i| {
                let raw = &sentences[i % sentences.len()];
                let n = normalize_for(vocab, raw, false);
                if let Some(&(position, ch)) = n.rejected.first() {
                    return Err(Error::OutOfVocabulary { ch, position });
                }
                if n.text.is_empty() {
                    return Err(Error::invalid(format!("sentence {raw:?} is empty after normalization")));
                }
                Ok(n.text)
            })
            .collect(),
    }
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:05}")
}

/// Writes `<id>.lrv`, `<id>.csv`, `transcripts.txt` and `manifest.tsv` under `out_dir` and
/// returns the manifest (paths relative to `out_dir`).
pub fn generate_corpus(spec: &SynthSpec, vocab: &Vocabulary, out_dir: &Path) -> Result<Manifest> {
    let texts = sample_texts(spec, vocab)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = texts
        .par_iter()
        .enumerate()
        .map(|(i, text)| {
            let id = utterance_id(i);
            let r = render_utterance(text, vocab, spec, noise_seed(spec.seed, i))?;
            let frames = format!("{id}.lrv");
            let landmarks = format!("{id}.csv");
            r.video.save(&out_dir.join(&frames))?;
            let csv_path = out_dir.join(&landmarks);
            std::fs::write(&csv_path, landmarks_to_csv(&r.landmarks)).map_err(|e| Error::io(&csv_path, e))?;
            Ok(ManifestEntry {
                id,
                frames: frames.into(),
                landmarks: Some(landmarks.into()),
                text: text.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { entries };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    let tpath = out_dir.join("transcripts.txt");
    std::fs::write(&tpath, manifest.transcripts()).map_err(|e| Error::io(&tpath, e))?;
    Ok(manifest)
}
