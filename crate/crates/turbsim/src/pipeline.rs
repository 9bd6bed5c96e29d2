//! Batch generation and replay.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use turbsim_core::io::{read_image, to_dynamic, BitDepth};
use turbsim_core::mao::{MaoSimulator, PsfBasis};
use turbsim_core::ops::{center_crop_square, resize_bilinear};
use turbsim_core::{chak, chimitt, mei, schwartzman};
use turbsim_core::{derive_seed, Degraded, DrawnParams, Error as CoreError, ImageBuffer, RandomSource};

use crate::config::{MethodName, MethodParams, PipelineConfig};
use crate::error::{PipelineError, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGE_DIR: &str = "images";
pub const FIELD_DIR: &str = "fields";

/// One generated sample. Paths to outputs are relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    pub index: usize,
    pub input_path: PathBuf,
    pub output_path: PathBuf,
    #[serde(flatten)]
    pub method: MethodParams,
    pub drawn: DrawnParams,
    pub seed: u64,
    pub image_size: usize,
    pub grayscale: bool,
    pub bit_depth: BitDepth,
    pub field_path: Option<PathBuf>,
    pub basis_cache: Option<PathBuf>,
    pub output_sha256: String,
}

/// A method ready to run; Mao keeps its fitted basis.
pub enum Simulator {
    Direct(MethodParams),
    Mao(MaoSimulator),
}

impl Simulator {
    /// Mao bases are rounded to the cache precision so that fresh and cached
    /// runs agree bit for bit.
    pub fn prepare(params: &MethodParams, basis_cache: Option<&Path>) -> Result<Self> {
        params.validate()?;
        let MethodParams::Mao(mp) = params else {
            return Ok(Simulator::Direct(params.clone()));
        };
        let basis = match basis_cache {
            Some(path) if path.exists() => PsfBasis::load(path)?,
            _ => {
                let fitted = MaoSimulator::new(mp.clone())?.basis().quantized();
                if let Some(path) = basis_cache {
                    let tmp = path.with_extension("tmp");
                    fitted.save(&tmp)?;
                    fs::rename(&tmp, path).map_err(PipelineError::io(path))?;
                }
                fitted
            }
        };
        Ok(Simulator::Mao(MaoSimulator::with_basis(mp.clone(), basis)?))
    }

    pub fn run(&self, img: &ImageBuffer, rng: &mut RandomSource) -> turbsim_core::Result<Degraded> {
        match self {
            Simulator::Mao(sim) => sim.degrade(img, rng),
            Simulator::Direct(MethodParams::Chak(p)) => chak::degrade_chak(img, p, rng),
            Simulator::Direct(MethodParams::Schwartzman(p)) => schwartzman::degrade_schwartzman(img, p, rng),
            Simulator::Direct(MethodParams::Chimitt(p)) => chimitt::degrade_chimitt(img, p, rng),
            Simulator::Direct(MethodParams::Mei(p)) => mei::degrade_mei(img, p, rng),
            Simulator::Direct(MethodParams::Mao(_)) => unreachable!("mao is prepared with its basis"),
        }
    }
}

/// Centre crop, bilinear resize to `size x size`, optional grayscale.
pub fn prepare_image(path: &Path, size: usize, grayscale: bool) -> Result<ImageBuffer> {
    let img = resize_bilinear(&center_crop_square(&read_image(path)?), size, size)?;
    Ok(if grayscale { img.to_grayscale() } else { img })
}

pub fn encode_png(img: &ImageBuffer, depth: BitDepth) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    to_dynamic(img, depth)?
        .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(CoreError::from)?;
    Ok(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct CorpusImage {
    path: PathBuf,
    color: bool,
}

/// Decodable images in `dir`, sorted by file name. Anything that fails to
/// decode is skipped with a warning.
fn scan_corpus(dir: &Path) -> Result<Vec<CorpusImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(PipelineError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let scanned: Vec<Option<CorpusImage>> = paths
        .into_par_iter()
        .map(|path| match read_image(&path) {
            Ok(img) => Some(CorpusImage { color: img.channels() > 1, path }),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                None
            }
        })
        .collect();
    let images: Vec<CorpusImage> = scanned.into_iter().flatten().collect();
    if images.is_empty() {
        return Err(PipelineError::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(images)
}

fn numbered_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

/// Removes numbered outputs left by earlier runs that this run did not write.
fn remove_stale(dir: &Path, ext: &str, keep: usize) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir).map_err(PipelineError::io(dir))? {
        let path = entry.map_err(PipelineError::io(dir))?.path();
        let stale = path.extension().is_some_and(|e| e == ext)
            && path
                .file_stem()
                .and_then(|s| s.to_str())
                .filter(|s| s.len() == 6)
                .and_then(|s| s.parse::<usize>().ok())
                .is_some_and(|i| i >= keep);
        if stale {
            fs::remove_file(&path).map_err(PipelineError::io(&path))?;
        }
    }
    Ok(())
}

/// Writes `count` degraded images and a manifest. Image `i` uses the
/// `i mod n`-th readable input and seed `derive_seed(master_seed, i)`, so the
/// output does not depend on the number of workers.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Vec<DegradationRecord>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &PipelineConfig) -> Result<Vec<DegradationRecord>> {
    let corpus = scan_corpus(&config.input_dir)?;
    if config.params.name() == MethodName::Chimitt && !config.grayscale {
        if let Some(img) = corpus.iter().find(|c| c.color) {
            return Err(CoreError::UnsupportedInput(format!(
                "{} is a color image and the chimitt simulator only handles grayscale; set grayscale = true",
                img.path.display()
            ))
            .into());
        }
    }
    let out = &config.output_dir;
    let image_dir = out.join(IMAGE_DIR);
    let field_dir = out.join(FIELD_DIR);
    fs::create_dir_all(&image_dir).map_err(PipelineError::io(&image_dir))?;
    if config.emit_fields {
        fs::create_dir_all(&field_dir).map_err(PipelineError::io(&field_dir))?;
    }
    let sim = Simulator::prepare(&config.params, config.basis_cache.as_deref())?;

    let records = (0..config.count)
        .into_par_iter()
        .map(|index| {
            let input = &corpus[index % corpus.len()].path;
            let seed = derive_seed(config.master_seed, index as u64);
            let img = prepare_image(input, config.image_size, config.grayscale)?;
            let degraded = sim.run(&img, &mut RandomSource::new(seed))?;
            let bytes = encode_png(&degraded.image, config.bit_depth)?;
            let output_path = Path::new(IMAGE_DIR).join(numbered_name(index, "png"));
            let target = out.join(&output_path);
            fs::write(&target, &bytes).map_err(PipelineError::io(&target))?;
            let field_path = if config.emit_fields {
                let rel = Path::new(FIELD_DIR).join(numbered_name(index, "flo"));
                degraded.field.save(out.join(&rel))?;
                Some(rel)
            } else {
                None
            };
            Ok(DegradationRecord {
                index,
                input_path: input.clone(),
                output_path,
                method: config.params.clone(),
                drawn: degraded.drawn,
                seed,
                image_size: config.image_size,
                grayscale: config.grayscale,
                bit_depth: config.bit_depth,
                field_path,
                basis_cache: config.basis_cache.clone(),
                output_sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    remove_stale(&image_dir, "png", config.count)?;
    remove_stale(&field_dir, "flo", if config.emit_fields { config.count } else { 0 })?;
    write_manifest(&out.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

/// Writes JSON lines to a sibling temporary file, then renames it into place.
pub fn write_manifest(path: &Path, records: &[DegradationRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| PipelineError::Manifest(e.to_string()))?);
        text.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, text).map_err(PipelineError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(PipelineError::io(path))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<DegradationRecord>> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Manifest(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

/// Regenerates the degraded image of a record.
pub fn replay(record: &DegradationRecord) -> Result<ImageBuffer> {
    let sim = Simulator::prepare(&record.method, record.basis_cache.as_deref())?;
    let img = prepare_image(&record.input_path, record.image_size, record.grayscale)?;
    Ok(sim.run(&img, &mut RandomSource::new(record.seed))?.image)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayCheck {
    pub index: usize,
    pub sha256: String,
    /// Regenerated encoding hashes to the recorded value.
    pub matches_record: bool,
    /// Regenerated encoding equals the file on disk.
    pub matches_file: bool,
}

/// Replays a record and compares it with the stored output. `base` is the
/// directory holding the manifest.
pub fn replay_check(record: &DegradationRecord, base: &Path) -> Result<ReplayCheck> {
    let bytes = encode_png(&replay(record)?, record.bit_depth)?;
    let sha256 = sha256_hex(&bytes);
    let stored = base.join(&record.output_path);
    let on_disk = fs::read(&stored).map_err(PipelineError::io(&stored))?;
    Ok(ReplayCheck {
        index: record.index,
        matches_record: sha256 == record.output_sha256,
        matches_file: on_disk == bytes,
        sha256,
    })
}
