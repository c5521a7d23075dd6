//! The six stages and the work-directory layout they share.
//!
//! ```text
//! <work>/manifest.json        corpus ids, noise spec, seed
//! <work>/clean/<id>.png       clean references (when available)
//! <work>/noisy/<id>.png
//! <work>/noise_patches.ckpt
//! <work>/wgan.ckpt, wgan_trace.csv
//! <work>/denoiser_initial.ckpt, denoiser.ckpt, g2g_trace.csv
//! <work>/denoised/<id>.png
//! <work>/report.json
//! <work>/stages/<stage>.json  completion records
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use g2g::extract::{extract_noise_patches, patches_from_checkpoint, patches_to_checkpoint};
use g2g::g2g::{iterate_g2g, train_g2g, write_trace as write_g2g_trace, DenoiserModel};
use g2g::metrics::EvalReport;
use g2g::noise::{NoiseKind, NoiseModel};
use g2g::toy::toy_corpus;
use g2g::wgan::{train_wgan, write_trace as write_wgan_trace, WganBundle};
use g2g::{Checkpoint, Image, ImagePatch, Rng, Tensor};

use crate::config::{RunConfig, Split, Stage};
use crate::error::CliError;

const SYNTH_STREAM: u64 = 0x73796e;
const FINGERPRINT_KEY: &str = "meta/fingerprint";

/// What a corpus is made of and how it was corrupted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    pub seed: u64,
    pub noise_spec: String,
    pub noise: NoiseKind,
    /// `builtin-toy` or the clean directory that was read.
    pub source: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Written when a stage completes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub fingerprint: String,
    pub outputs: Vec<String>,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> PathBuf {
        self.path("manifest.json")
    }

    pub fn clean_dir(&self) -> PathBuf {
        self.path("clean")
    }

    pub fn noisy_dir(&self) -> PathBuf {
        self.path("noisy")
    }

    pub fn denoised_dir(&self) -> PathBuf {
        self.path("denoised")
    }

    pub fn record(&self, stage: Stage) -> PathBuf {
        self.path(&format!("stages/{}.json", stage.name()))
    }
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub ws: Workspace,
    /// Rerun stages even when their record is current.
    pub force: bool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        let ws = Workspace::new(cfg.paths.work_dir.clone());
        Self { cfg, ws, force: false }
    }

    pub fn run_all(&self) -> Result<EvalReport, CliError> {
        self.synthesize()?;
        self.extract()?;
        self.train_wgan()?;
        self.train_denoiser()?;
        self.denoise(None, None)?;
        self.evaluate(None, None)
    }

    pub fn synthesize(&self) -> Result<Outcome, CliError> {
        let outputs = ["manifest.json", "noisy"];
        self.guarded(Stage::Synthesize, &outputs, || {
            let kind = self.cfg.noise_kind()?;
            let d = &self.cfg.data;
            let (source, clean) = match &self.cfg.paths.clean_dir {
                Some(dir) => (dir.display().to_string(), read_png_dir(dir)?),
                None => (
                    "builtin-toy".to_string(),
                    toy_corpus(d.train_images + d.test_images, d.height, d.width, self.cfg.seed),
                ),
            };
            if clean.is_empty() {
                return Err(CliError::Data(format!("no PNG images found in {source}")));
            }
            let n_test = d.test_images.min(clean.len().saturating_sub(1));
            let split = clean.len() - n_test;
            reset_dir(&self.ws.clean_dir())?;
            reset_dir(&self.ws.noisy_dir())?;
            let mut seeds = Rng::new(self.cfg.seed, SYNTH_STREAM);
            for (id, img) in &clean {
                let noisy = NoiseModel::new(kind, seeds.next_u64())?.corrupt(img)?;
                img.save_png(self.ws.clean_dir().join(format!("{id}.png")))?;
                noisy.save_png(self.ws.noisy_dir().join(format!("{id}.png")))?;
            }
            let ids: Vec<String> = clean.into_iter().map(|(id, _)| id).collect();
            let manifest = Manifest {
                fingerprint: self.cfg.stage_fingerprint(Stage::Synthesize),
                seed: self.cfg.seed,
                noise_spec: self.cfg.data.noise.clone(),
                noise: kind,
                source,
                train: ids[..split].to_vec(),
                test: ids[split..].to_vec(),
            };
            fs::write(self.ws.manifest(), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
            log::info!("synthesized {} train and {} test images", split, n_test);
            Ok(())
        })
    }

    pub fn manifest(&self) -> Result<Manifest, CliError> {
        self.require(Stage::Synthesize)?;
        let text = fs::read_to_string(self.ws.manifest())
            .map_err(|e| CliError::Data(format!("cannot read manifest: {e}; run `g2g synthesize` first")))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("malformed manifest: {e}")))
    }

    fn load_split(&self, ids: &[String]) -> Result<Vec<Image>, CliError> {
        ids.iter()
            .map(|id| Image::load_png(self.ws.noisy_dir().join(format!("{id}.png"))).map_err(CliError::from))
            .collect()
    }

    fn train_images(&self) -> Result<Vec<Image>, CliError> {
        let m = self.manifest()?;
        self.load_split(&m.train)
    }

    pub fn extract(&self) -> Result<Outcome, CliError> {
        self.guarded(Stage::Extract, &["noise_patches.ckpt"], || {
            let m = self.manifest()?;
            let images = self.load_split(&m.train)?;
            let patches: Vec<ImagePatch> = images
                .into_iter()
                .zip(&m.train)
                .map(|(img, id)| ImagePatch::whole(img, id.clone()))
                .collect();
            let ecfg = self.cfg.extract.resolve(&m.noise);
            let found = extract_noise_patches(&patches, &ecfg)?;
            if found.is_empty() {
                return Err(CliError::Data(format!(
                    "no smooth patches found in {} images; try a larger lambda or smaller patch_size",
                    patches.len()
                )));
            }
            log::info!("extracted {} noise patches", found.len());
            let mut ckpt = patches_to_checkpoint(&found);
            stamp(&mut ckpt, &self.cfg.stage_fingerprint(Stage::Extract));
            ckpt.save(self.ws.path("noise_patches.ckpt"))?;
            Ok(())
        })
    }

    pub fn noise_patches(&self) -> Result<Vec<Image>, CliError> {
        self.require(Stage::Extract)?;
        let ckpt = self.load_ckpt("noise_patches.ckpt", Stage::Extract)?;
        Ok(patches_from_checkpoint(&ckpt)?)
    }

    pub fn train_wgan(&self) -> Result<Outcome, CliError> {
        self.guarded(Stage::TrainWgan, &["wgan.ckpt", "wgan_trace.csv"], || {
            let noisy = self.train_images()?;
            let noise = self.noise_patches()?;
            let run = train_wgan(&noisy, &noise, &self.cfg.wgan, self.cfg.seed)?;
            let mut ckpt = run.bundle.to_checkpoint();
            stamp(&mut ckpt, &self.cfg.stage_fingerprint(Stage::TrainWgan));
            ckpt.save(self.ws.path("wgan.ckpt"))?;
            write_wgan_trace(&run.trace, fs::File::create(self.ws.path("wgan_trace.csv"))?)?;
            Ok(())
        })
    }

    pub fn bundle(&self) -> Result<WganBundle, CliError> {
        self.require(Stage::TrainWgan)?;
        let ckpt = self.load_ckpt("wgan.ckpt", Stage::TrainWgan)?;
        Ok(WganBundle::from_checkpoint(&self.cfg.wgan.arch, &ckpt)?)
    }

    pub fn train_denoiser(&self) -> Result<Outcome, CliError> {
        let outputs = ["denoiser_initial.ckpt", "denoiser.ckpt", "g2g_trace.csv"];
        self.guarded(Stage::TrainDenoiser, &outputs, || {
            let noisy = self.train_images()?;
            let tag = format!("{} (generated pairs)", self.manifest()?.noise_spec);
            let mut bundle = self.bundle()?;
            let fp = self.cfg.stage_fingerprint(Stage::TrainDenoiser);
            let mut first = train_g2g(&noisy, &mut bundle, None, &self.cfg.g2g, self.cfg.seed)?;
            first.model.trained_noise_tag = tag;
            self.save_model(&first.model, "denoiser_initial.ckpt", &fp)?;
            let refined = iterate_g2g(&noisy, &mut bundle, first.model, &self.cfg.g2g, self.cfg.seed)?;
            self.save_model(&refined.model, "denoiser.ckpt", &fp)?;
            let mut trace = first.trace;
            trace.extend(refined.trace);
            write_g2g_trace(&trace, fs::File::create(self.ws.path("g2g_trace.csv"))?)?;
            Ok(())
        })
    }

    fn save_model(&self, m: &DenoiserModel, name: &str, fp: &str) -> Result<(), CliError> {
        let mut ckpt = m.to_checkpoint();
        stamp(&mut ckpt, fp);
        ckpt.save(self.ws.path(name))?;
        Ok(())
    }

    /// `name` is `denoiser.ckpt` or `denoiser_initial.ckpt`.
    pub fn model(&self, name: &str) -> Result<DenoiserModel, CliError> {
        self.require(Stage::TrainDenoiser)?;
        Ok(DenoiserModel::from_checkpoint(&self.load_ckpt(name, Stage::TrainDenoiser)?)?)
    }

    /// Denoise the configured split into `denoised/`, or an arbitrary PNG
    /// directory into `output`. Custom directories are always processed.
    pub fn denoise(&self, input: Option<&Path>, output: Option<&Path>) -> Result<Outcome, CliError> {
        if input.is_some() || output.is_some() {
            let out = output.map(Path::to_path_buf).unwrap_or_else(|| self.ws.denoised_dir());
            let images = match input {
                Some(dir) => read_png_dir(dir)?,
                None => self.split_images()?,
            };
            self.denoise_into(images, &out)?;
            return Ok(Outcome::Ran);
        }
        self.guarded(Stage::Denoise, &["denoised"], || {
            let images = self.split_images()?;
            self.denoise_into(images, &self.ws.denoised_dir())
        })
    }

    fn split_images(&self) -> Result<Vec<(String, Image)>, CliError> {
        let m = self.manifest()?;
        let ids = match self.cfg.eval.split {
            Split::Test if !m.test.is_empty() => m.test,
            _ => m.train,
        };
        Ok(ids.iter().cloned().zip(self.load_split(&ids)?).collect())
    }

    fn denoise_into(&self, images: Vec<(String, Image)>, out: &Path) -> Result<(), CliError> {
        let mut model = self.model("denoiser.ckpt")?;
        reset_dir(out)?;
        for (id, img) in images {
            model.denoise(&img)?.save_png(out.join(format!("{id}.png")))?;
        }
        Ok(())
    }

    /// Scores every PNG in `denoised` against the same-named file in
    /// `clean`, writes `report.json` and prints the table.
    pub fn evaluate(&self, clean: Option<&Path>, denoised: Option<&Path>) -> Result<EvalReport, CliError> {
        let clean = clean.map(Path::to_path_buf).unwrap_or_else(|| self.ws.clean_dir());
        let denoised = denoised.map(Path::to_path_buf).unwrap_or_else(|| self.ws.denoised_dir());
        let est = read_png_dir(&denoised)?;
        if est.is_empty() {
            return Err(CliError::Data(format!(
                "no denoised images in {}; run `g2g denoise` first",
                denoised.display()
            )));
        }
        let refs = est
            .iter()
            .map(|(id, _)| {
                let p = clean.join(format!("{id}.png"));
                Image::load_png(&p).map_err(|e| CliError::Data(format!("clean reference {}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let report = EvalReport::evaluate(
            est.iter().zip(&refs).map(|((id, e), r)| (id.clone(), e, r)),
            self.cfg.fingerprint(),
        )?;
        fs::create_dir_all(&self.ws.root)?;
        fs::write(self.ws.path("report.json"), report.to_json())?;
        let record = StageRecord {
            stage: Stage::Evaluate.name().into(),
            fingerprint: self.cfg.stage_fingerprint(Stage::Evaluate),
            outputs: vec!["report.json".into()],
            seconds: 0.0,
        };
        self.write_record(Stage::Evaluate, &record)?;
        Ok(report)
    }

    fn load_ckpt(&self, name: &str, stage: Stage) -> Result<Checkpoint, CliError> {
        let path = self.ws.path(name);
        let ckpt = Checkpoint::load(&path)
            .map_err(|e| CliError::Data(format!("{}: {e}; rerun `g2g {}`", path.display(), stage.name())))?;
        let want = self.cfg.stage_fingerprint(stage);
        match read_stamp(&ckpt) {
            Some(fp) if fp == want => Ok(ckpt),
            Some(fp) => Err(CliError::Data(format!(
                "{} was written under config {}, current config is {}; rerun `g2g {}`",
                path.display(),
                short(&fp),
                short(&want),
                stage.name()
            ))),
            None => Err(CliError::Data(format!("{} carries no config fingerprint", path.display()))),
        }
    }

    /// The record of `stage` must exist and match the current config.
    pub fn require(&self, stage: Stage) -> Result<StageRecord, CliError> {
        let want = self.cfg.stage_fingerprint(stage);
        match self.read_record(stage) {
            None => Err(CliError::Data(format!(
                "missing inputs from stage {0}; run `g2g {0}` first",
                stage.name()
            ))),
            Some(r) if r.fingerprint != want => Err(CliError::Data(format!(
                "stage {0} ran under config {1}, current config is {2}; rerun `g2g {0}`",
                stage.name(),
                short(&r.fingerprint),
                short(&want)
            ))),
            Some(r) => Ok(r),
        }
    }

    fn read_record(&self, stage: Stage) -> Option<StageRecord> {
        let text = fs::read_to_string(self.ws.record(stage)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn write_record(&self, stage: Stage, r: &StageRecord) -> Result<(), CliError> {
        let p = self.ws.record(stage);
        fs::create_dir_all(p.parent().expect("record has a parent"))?;
        fs::write(p, serde_json::to_string_pretty(r).expect("record serializes"))?;
        Ok(())
    }

    /// Skip `body` when the stage record is current and every output
    /// exists; otherwise run it and write a fresh record.
    fn guarded(&self, stage: Stage, outputs: &[&str], body: impl FnOnce() -> Result<(), CliError>) -> Result<Outcome, CliError> {
        let fp = self.cfg.stage_fingerprint(stage);
        let current = self
            .read_record(stage)
            .is_some_and(|r| r.fingerprint == fp && outputs.iter().all(|o| self.ws.path(o).exists()));
        if current && !self.force {
            eprintln!("{}: up to date (config {}), skipping", stage.name(), short(&fp));
            return Ok(Outcome::UpToDate);
        }
        // A stale downstream record must not survive a rerun.
        for later in Stage::ALL.iter().filter(|s| **s > stage) {
            let _ = fs::remove_file(self.ws.record(*later));
        }
        fs::create_dir_all(&self.ws.root)?;
        let t = Instant::now();
        body()?;
        let record = StageRecord {
            stage: stage.name().into(),
            fingerprint: fp,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            seconds: t.elapsed().as_secs_f64(),
        };
        self.write_record(stage, &record)?;
        log::info!("{} finished in {:.1}s", stage.name(), record.seconds);
        Ok(Outcome::Ran)
    }
}

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

fn stamp(ckpt: &mut Checkpoint, fp: &str) {
    let bytes: Vec<f64> = fp.bytes().map(f64::from).collect();
    ckpt.push(FINGERPRINT_KEY, Tensor::new(vec![bytes.len()], bytes).expect("1-d"));
}

pub fn read_stamp(ckpt: &Checkpoint) -> Option<String> {
    let t = ckpt.get(FINGERPRINT_KEY)?;
    String::from_utf8(t.data().iter().map(|&b| b as u8).collect()).ok()
}

fn reset_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// `(stem, image)` for every `.png` in `dir`, sorted by name.
pub fn read_png_dir(dir: &Path) -> Result<Vec<(String, Image)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let id = p.file_stem().expect("png has a stem").to_string_lossy().into_owned();
            Ok((id, Image::load_png(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?))
        })
        .collect()
}
