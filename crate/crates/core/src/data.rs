//! Synthetic speaker-partitioned corpus generation, the on-disk dataset
//! format, and partition statistics.
//!
//! Heterogeneity is one scalar knob: it scales the per-speaker feature
//! offset/scale dispersion (input space) and the token-frequency skew
//! (output space) together. At zero every speaker shares the exact same
//! profile.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Utterance;
use crate::rng::{derive_rng, stream};

/// Sampled per-speaker generation profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: usize,
    pub feature_offset: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub token_distribution: Vec<f64>,
    pub utterance_count: usize,
}

/// One speaker's data: exactly one client in the federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub speaker_id: usize,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub num_speakers: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub utterances_per_speaker_mean: f64,
    pub utterances_per_speaker_std: f64,
    pub label_len_range: (usize, usize),
    pub frames_per_token_range: (usize, usize),
    /// 0 means IID: identical speaker profiles everywhere.
    pub heterogeneity: f64,
    pub noise_std: f64,
    pub rng_seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 {
            return Err(Error::InvalidConfig("num_speakers must be >= 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be >= 1".into()));
        }
        if self.vocab_size > self.feature_dim {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} exceeds the {} orthogonal prototypes available at feature_dim {}",
                self.vocab_size, self.feature_dim, self.feature_dim
            )));
        }
        if self.label_len_range.0 > self.label_len_range.1 || self.label_len_range.1 == 0 {
            return Err(Error::InvalidConfig("label_len_range must be non-empty".into()));
        }
        if self.frames_per_token_range.0 == 0
            || self.frames_per_token_range.0 > self.frames_per_token_range.1
        {
            return Err(Error::InvalidConfig("frames_per_token_range must be non-empty and >= 1".into()));
        }
        if self.heterogeneity < 0.0 || self.noise_std < 0.0 {
            return Err(Error::InvalidConfig("heterogeneity and noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Class prototypes shared corpus-wide: scaled orthogonal basis vectors.
fn prototype(token: usize, feature_dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; feature_dim];
    v[token] = 1.5;
    v
}

// Dirichlet concentration derived from the heterogeneity knob. Larger
// heterogeneity -> smaller concentration -> more skewed token usage.
const DIRICHLET_SOFTENING: f64 = 0.1;

fn sample_profile(spec: &CorpusSpec, speaker_id: usize) -> SpeakerProfile {
    let mut rng = derive_rng(spec.rng_seed, &[stream::PROFILE, speaker_id as u64]);
    let h = spec.heterogeneity;
    let d = spec.feature_dim;
    let v = spec.vocab_size;

    let (feature_offset, feature_scale, token_distribution) = if h == 0.0 {
        (vec![0.0; d], vec![1.0; d], vec![1.0 / v as f64; v])
    } else {
        let offset_dist = Normal::new(0.0, h).expect("h > 0");
        let log_scale_dist = Normal::new(0.0, h / 2.0).expect("h > 0");
        let offsets: Vec<f64> = (0..d).map(|_| offset_dist.sample(&mut rng)).collect();
        let scales: Vec<f64> = (0..d).map(|_| log_scale_dist.sample(&mut rng).exp()).collect();
        let conc = 1.0 / (h + DIRICHLET_SOFTENING);
        let gamma = Gamma::new(conc, 1.0).expect("conc > 0");
        let mut draws: Vec<f64> = (0..v).map(|_| gamma.sample(&mut rng).max(1e-12)).collect();
        let total: f64 = draws.iter().sum();
        draws.iter_mut().for_each(|x| *x /= total);
        (offsets, scales, draws)
    };

    let count_dist =
        Normal::new(spec.utterances_per_speaker_mean, spec.utterances_per_speaker_std.max(0.0));
    let utterance_count = match count_dist {
        Ok(dist) if spec.utterances_per_speaker_std > 0.0 => {
            dist.sample(&mut rng).round().max(1.0) as usize
        }
        _ => spec.utterances_per_speaker_mean.round().max(1.0) as usize,
    };

    SpeakerProfile { speaker_id, feature_offset, feature_scale, token_distribution, utterance_count }
}

fn sample_token(rng: &mut impl Rng, dist: &[f64]) -> usize {
    let x: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (k, p) in dist.iter().enumerate() {
        acc += p;
        if x < acc {
            return k;
        }
    }
    dist.len() - 1
}

fn sample_utterance(spec: &CorpusSpec, profile: &SpeakerProfile, rng: &mut impl Rng) -> Utterance {
    let (lmin, lmax) = spec.label_len_range;
    let label_len = rng.gen_range(lmin.max(1)..=lmax);
    let labels: Vec<usize> =
        (0..label_len).map(|_| sample_token(rng, &profile.token_distribution)).collect();

    let (fmin, fmax) = spec.frames_per_token_range;
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).expect("noise_std > 0"))
    } else {
        None
    };
    let mut frames = Vec::new();
    for (i, &tok) in labels.iter().enumerate() {
        let mut n_frames = rng.gen_range(fmin..=fmax);
        if i > 0 && labels[i - 1] == tok {
            // a repeated token needs room for the separating blank
            n_frames = n_frames.max(2);
        }
        let proto = prototype(tok, spec.feature_dim);
        for _ in 0..n_frames {
            let mut f: Vec<f64> = proto
                .iter()
                .zip(&profile.feature_scale)
                .zip(&profile.feature_offset)
                .map(|((p, s), o)| p * s + o)
                .collect();
            if let Some(n) = &noise {
                f.iter_mut().for_each(|x| *x += n.sample(rng));
            }
            frames.push(f);
        }
    }
    Utterance { frames, labels }
}

// Held-out utterances per speaker: a tenth of the training count, at least
// one.
fn eval_count(train_count: usize) -> usize {
    (train_count / 10).max(1)
}

/// Generate the federation plus a held-out eval split drawn from the same
/// speaker pool. Deterministic in `spec.rng_seed`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<(Vec<ClientDataset>, Vec<ClientDataset>)> {
    spec.validate()?;
    let mut train = Vec::with_capacity(spec.num_speakers);
    let mut eval = Vec::with_capacity(spec.num_speakers);
    for sid in 0..spec.num_speakers {
        let profile = sample_profile(spec, sid);
        let mut rng = derive_rng(spec.rng_seed, &[stream::UTTERANCE, sid as u64]);
        let utterances: Vec<Utterance> =
            (0..profile.utterance_count).map(|_| sample_utterance(spec, &profile, &mut rng)).collect();
        let mut eval_rng = derive_rng(spec.rng_seed, &[stream::EVAL, sid as u64]);
        let eval_utts: Vec<Utterance> = (0..eval_count(profile.utterance_count))
            .map(|_| sample_utterance(spec, &profile, &mut eval_rng))
            .collect();
        train.push(ClientDataset { speaker_id: sid, utterances });
        eval.push(ClientDataset { speaker_id: sid, utterances: eval_utts });
    }
    Ok((train, eval))
}

/// Speaker profiles without the sampled data; exposed for tests and
/// diagnostics.
pub fn speaker_profiles(spec: &CorpusSpec) -> Result<Vec<SpeakerProfile>> {
    spec.validate()?;
    Ok((0..spec.num_speakers).map(|sid| sample_profile(spec, sid)).collect())
}

/// Table-1 style partition statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub num_clients: usize,
    pub num_utterances: usize,
    pub utterances_per_client_mean: f64,
    /// Population standard deviation.
    pub utterances_per_client_std: f64,
    /// Entropy (nats) of each client's empirical label histogram.
    pub per_client_token_entropy: Vec<f64>,
}

pub fn partition_stats(federation: &[ClientDataset]) -> PartitionStats {
    let counts: Vec<f64> = federation.iter().map(|c| c.utterances.len() as f64).collect();
    let n = counts.len().max(1) as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;

    let per_client_token_entropy = federation
        .iter()
        .map(|c| {
            let mut hist = std::collections::BTreeMap::new();
            let mut total = 0usize;
            for u in &c.utterances {
                for &l in &u.labels {
                    *hist.entry(l).or_insert(0usize) += 1;
                    total += 1;
                }
            }
            if total == 0 {
                return 0.0;
            }
            hist.values()
                .map(|&k| {
                    let p = k as f64 / total as f64;
                    -p * p.ln()
                })
                .sum()
        })
        .collect();

    PartitionStats {
        num_clients: federation.len(),
        num_utterances: federation.iter().map(|c| c.utterances.len()).sum(),
        utterances_per_client_mean: mean,
        utterances_per_client_std: var.sqrt(),
        per_client_token_entropy,
    }
}

/// Split the federation at speaker granularity into a flat server pool and
/// the remaining FL clients. No speaker straddles the split.
pub fn split_server_fl(
    federation: &[ClientDataset],
    server_fraction: f64,
    seed: u64,
) -> Result<(Vec<Utterance>, Vec<ClientDataset>)> {
    if !(0.0..1.0).contains(&server_fraction) || server_fraction == 0.0 {
        return Err(Error::InvalidConfig("server_fraction must be in (0,1)".into()));
    }
    let n = federation.len();
    let server_count = (server_fraction * n as f64).round() as usize;
    if server_count == 0 || server_count >= n {
        return Err(Error::InvalidConfig(format!(
            "server_fraction {server_fraction} yields an empty side for {n} speakers"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[stream::SPLIT]);
    ids.shuffle(&mut rng);
    let mut server_ids: Vec<usize> = ids[..server_count].to_vec();
    server_ids.sort_unstable();
    let mut server_pool = Vec::new();
    let mut fl_pool = Vec::new();
    for (i, client) in federation.iter().enumerate() {
        if server_ids.binary_search(&i).is_ok() {
            server_pool.extend(client.utterances.iter().cloned());
        } else {
            fl_pool.push(client.clone());
        }
    }
    Ok((server_pool, fl_pool))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitInfo {
    pub name: String,
    pub path: String,
    pub num_clients: usize,
    pub num_utterances: usize,
}

/// Manifest written next to the JSONL split files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: CorpusSpec,
    pub rng_seed: u64,
    pub splits: Vec<SplitInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct UtteranceRecord {
    speaker_id: usize,
    frames: Vec<Vec<f64>>,
    tokens: Vec<usize>,
}

/// Write one split as JSON lines, one self-contained record per utterance.
pub fn write_split<P: AsRef<Path>>(path: P, clients: &[ClientDataset]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in clients {
        for u in &c.utterances {
            let rec = UtteranceRecord {
                speaker_id: c.speaker_id,
                frames: u.frames.clone(),
                tokens: u.labels.clone(),
            };
            serde_json::to_writer(&mut f, &rec)?;
            f.write_all(b"\n")?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a split back, regrouping records into per-speaker clients in
/// ascending speaker order.
pub fn read_split<P: AsRef<Path>>(path: P) -> Result<Vec<ClientDataset>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut by_speaker: std::collections::BTreeMap<usize, Vec<Utterance>> =
        std::collections::BTreeMap::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UtteranceRecord = serde_json::from_str(&line)?;
        by_speaker
            .entry(rec.speaker_id)
            .or_default()
            .push(Utterance { frames: rec.frames, labels: rec.tokens });
    }
    Ok(by_speaker
        .into_iter()
        .map(|(speaker_id, utterances)| ClientDataset { speaker_id, utterances })
        .collect())
}

/// Write train/eval splits plus manifest into `dir`, returning the manifest
/// path.
pub fn write_corpus<P: AsRef<Path>>(
    dir: P,
    spec: &CorpusSpec,
    train: &[ClientDataset],
    eval: &[ClientDataset],
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_split(dir.join("train.jsonl"), train)?;
    write_split(dir.join("eval.jsonl"), eval)?;
    let manifest = Manifest {
        spec: spec.clone(),
        rng_seed: spec.rng_seed,
        splits: vec![
            SplitInfo {
                name: "train".into(),
                path: "train.jsonl".into(),
                num_clients: train.len(),
                num_utterances: train.iter().map(|c| c.utterances.len()).sum(),
            },
            SplitInfo {
                name: "eval".into(),
                path: "eval.jsonl".into(),
                num_clients: eval.len(),
                num_utterances: eval.iter().map(|c| c.utterances.len()).sum(),
            },
        ],
    };
    let manifest_path = dir.join("manifest.json");
    let mut f = std::fs::File::create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(manifest_path)
}

/// Load a corpus from its manifest path (or the directory containing it).
pub fn read_corpus<P: AsRef<Path>>(path: P) -> Result<(Manifest, Vec<ClientDataset>, Vec<ClientDataset>)> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let manifest: Manifest = serde_json::from_reader(std::fs::File::open(&manifest_path)?)?;
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for split in &manifest.splits {
        let loaded = read_split(dir.join(&split.path))?;
        match split.name.as_str() {
            "train" => train = loaded,
            "eval" => eval = loaded,
            other => {
                return Err(Error::InvalidConfig(format!("unknown split name {other}")));
            }
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("train split".into()));
    }
    Ok((manifest, train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            num_speakers: 4,
            vocab_size: 3,
            feature_dim: 4,
            utterances_per_speaker_mean: 6.0,
            utterances_per_speaker_std: 1.0,
            label_len_range: (1, 3),
            frames_per_token_range: (1, 2),
            heterogeneity: 1.0,
            noise_std: 0.05,
            rng_seed: 77,
        }
    }

    #[test]
    fn iid_limit_shares_profiles() {
        let spec = CorpusSpec { heterogeneity: 0.0, ..small_spec() };
        let profiles = speaker_profiles(&spec).unwrap();
        for p in &profiles[1..] {
            assert_eq!(p.feature_offset, profiles[0].feature_offset);
            assert_eq!(p.feature_scale, profiles[0].feature_scale);
            assert_eq!(p.token_distribution, profiles[0].token_distribution);
        }
    }

    #[test]
    fn degenerate_corpus_is_pure_prototype() {
        let spec = CorpusSpec {
            heterogeneity: 0.0,
            noise_std: 0.0,
            vocab_size: 1,
            label_len_range: (1, 1),
            ..small_spec()
        };
        let (train, _) = generate_corpus(&spec).unwrap();
        let proto = prototype(0, spec.feature_dim);
        for c in &train {
            for u in &c.utterances {
                for f in &u.frames {
                    assert_eq!(f, &proto);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_utterance_is_ctc_feasible() {
        let spec = CorpusSpec { frames_per_token_range: (1, 1), ..small_spec() };
        let (train, eval) = generate_corpus(&spec).unwrap();
        for c in train.iter().chain(&eval) {
            for u in &c.utterances {
                assert!(u.ctc_feasible(), "labels {:?} frames {}", u.labels, u.frames.len());
            }
        }
    }

    #[test]
    fn stats_arithmetic() {
        let mk = |sid: usize, n: usize| ClientDataset {
            speaker_id: sid,
            utterances: (0..n)
                .map(|_| Utterance { frames: vec![vec![0.0; 2]], labels: vec![0] })
                .collect(),
        };
        let stats = partition_stats(&[mk(0, 3), mk(1, 5)]);
        assert_eq!(stats.num_clients, 2);
        assert_eq!(stats.num_utterances, 8);
        assert_eq!(stats.utterances_per_client_mean, 4.0);
        assert_eq!(stats.utterances_per_client_std, 1.0);
    }

    #[test]
    fn uniform_usage_gives_log_vocab_entropy() {
        let client = ClientDataset {
            speaker_id: 0,
            utterances: (0..4)
                .map(|k| Utterance { frames: vec![vec![0.0; 4]], labels: vec![k] })
                .collect(),
        };
        let stats = partition_stats(&[client]);
        assert!((stats.per_client_token_entropy[0] - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn split_is_a_partition() {
        let spec = CorpusSpec { num_speakers: 10, ..small_spec() };
        let (train, _) = generate_corpus(&spec).unwrap();
        let (server, fl) = split_server_fl(&train, 0.2, 5).unwrap();
        assert_eq!(fl.len(), 8);
        let total_train: usize = train.iter().map(|c| c.utterances.len()).sum();
        let total_fl: usize = fl.iter().map(|c| c.utterances.len()).sum();
        assert_eq!(server.len() + total_fl, total_train);
        // determinism
        let (server2, fl2) = split_server_fl(&train, 0.2, 5).unwrap();
        assert_eq!(server, server2);
        assert_eq!(fl, fl2);
    }

    #[test]
    fn split_rejects_empty_side() {
        let spec = CorpusSpec { num_speakers: 3, ..small_spec() };
        let (train, _) = generate_corpus(&spec).unwrap();
        assert!(split_server_fl(&train, 0.01, 5).is_err());
        assert!(split_server_fl(&train, 0.99, 5).is_err());
    }

    #[test]
    fn corpus_files_round_trip() {
        let spec = small_spec();
        let (train, eval) = generate_corpus(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &spec, &train, &eval).unwrap();
        let (manifest, train2, eval2) = read_corpus(dir.path()).unwrap();
        assert_eq!(manifest.spec, spec);
        assert_eq!(train, train2);
        assert_eq!(eval, eval2);
    }

    #[test]
    fn vocab_larger_than_feature_dim_errors() {
        let spec = CorpusSpec { vocab_size: 5, feature_dim: 4, ..small_spec() };
        assert!(generate_corpus(&spec).is_err());
    }

    #[test]
    fn heterogeneity_widens_token_distributions() {
        // expectation check over repeated corpus draws
        let mean_pairwise = |h: f64| -> f64 {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for seed in 0..20u64 {
                let spec = CorpusSpec { heterogeneity: h, rng_seed: 1000 + seed, ..small_spec() };
                let profiles = speaker_profiles(&spec).unwrap();
                for i in 0..profiles.len() {
                    for j in (i + 1)..profiles.len() {
                        let d: f64 = profiles[i]
                            .token_distribution
                            .iter()
                            .zip(&profiles[j].token_distribution)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        total += d;
                        pairs += 1;
                    }
                }
            }
            total / pairs as f64
        };
        let low = mean_pairwise(0.3);
        let high = mean_pairwise(2.0);
        assert!(high > low, "expected dispersion to grow: {low} vs {high}");
    }
}
