//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`; pass criterion numbers
//! (`-- 2 7`) to run a subset. Exits nonzero if any selected criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng as _;
use upmix::audio::MultichannelAudio;
use upmix::dataset::{
    make_tiny_corpus, plan_corpus, synthesize_example, synthesize_split, CorpusConfig, Manifest, Split, StemSong,
    TinyCorpusConfig,
};
use upmix::dsp::{istft, stft, StftParams};
use upmix::latent::{run_study, StudyConfig, SpreadSummary};
use upmix::metrics::{angle_difference_report, evaluate, sd_sdr_samples, wasserstein_1d, wild, EvalInputs, HistSpec};
use upmix::model::{
    compress_magnitude, decode, elbo_loss_and_grad, encode, kl_divergence, reparameterize, train, ArchConfig, ModelParams,
    TrainConfig,
};
use upmix::rng::{substream, Rng};
use upmix::upmix::{baseline_upmix, style_transfer};
use upmix::vbap::{
    downmix, estimate_direction_from_gains, pan_gains, render_stems, circular_distance_deg, PanningConfig, SpeakerLayout,
    C,
};

// Pinned tolerances and budgets.
const STFT_MAX_REL_ERR: f64 = 1e-6;
const STFT_BUDGET: Duration = Duration::from_secs(1);
const VBAP_NORM_TOL: f64 = 1e-12;
const VBAP_ROUND_TRIP_DEG: f64 = 1e-6;
const DOWNMIX_ULPS: f64 = 1.0;
const SDR_HALF_TOL_DB: f64 = 1e-9;
const SDR_NOISE_TOL_DB: f64 = 1e-6;
const KL_MC_DRAWS: usize = 100_000;
const KL_MC_REL_TOL: f64 = 0.01;
const GRAD_REL_TOL: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;
/// Initial step of the fourth-order central difference.
const GRAD_FD_STEP: f64 = 5e-4;
/// Relative disagreement between stencils at two scales that flags a kink.
const KINK_REL: f64 = 1e-6;
/// Rounding noise of one loss evaluation, well above the observed 4e-15.
const LOSS_NOISE: f64 = 1e-13;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const OT_TOL: f64 = 1e-9;
const ANGLE_TOL_DEG: f64 = 0.01;
const OVERFIT_STEPS: usize = 500;
const OVERFIT_FACTOR: f64 = 100.0;
const BASELINE_TOL: f64 = 1e-12;
const DESK_BUDGET: Duration = Duration::from_secs(30 * 60);
const DESK_WIN_SHARE: f64 = 0.7;

// Desk-scale experiment shared by criteria 10 and 11.
const DESK_SEED: u64 = 1;
const DESK_STUDY_SEED: u64 = 9;
const DESK_SONGS: usize = 6;
const DESK_SEGMENTS_PER_SONG: usize = 64;
const DESK_EPOCHS: usize = 60;
/// KL weight matching a unit-variance Gaussian likelihood summed over the
/// 5 x 33 x 32 output bins when the reconstruction term is their mean.
const DESK_BETA: f64 = 4e-4;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn noise(rng: &mut Rng, channels: usize, len: usize) -> MultichannelAudio {
    let data = (0..channels).map(|_| (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    MultichannelAudio::new(44_100, data).unwrap()
}

fn c1_stft_round_trip() -> Outcome {
    let x = noise(&mut substream(1, "c1"), 5, (2.2 * 44_100.0) as usize);
    let params = StftParams::default();
    let start = Instant::now();
    let y = istft(&stft(&x, &params).unwrap(), &params, 44_100, Some(x.len())).unwrap();
    let elapsed = start.elapsed();
    let peak = x.channels().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = x.channels().iter().flatten().zip(y.channels().iter().flatten()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let rel = err / peak;
    outcome(rel < STFT_MAX_REL_ERR && elapsed < STFT_BUDGET, format!("max rel err {rel:.2e}, {:.3} s", elapsed.as_secs_f64()))
}

fn c2_vbap_invariants() -> Outcome {
    let layout = SpeakerLayout::default();
    let mut ring: Vec<usize> = (0..5).collect();
    ring.sort_by(|&a, &b| layout.azimuths()[a].rem_euclid(360.0).total_cmp(&layout.azimuths()[b].rem_euclid(360.0)));
    let adjacent = |a: usize, b: usize| {
        let (i, j) = (ring.iter().position(|&c| c == a).unwrap(), ring.iter().position(|&c| c == b).unwrap());
        (i + 1) % 5 == j || (j + 1) % 5 == i
    };
    let (mut worst_norm, mut worst_trip, mut bad_support) = (0.0f64, 0.0f64, 0);
    for k in 0..720 {
        let theta = k as f64 * 0.5;
        let g = pan_gains(theta, &layout);
        worst_norm = worst_norm.max((g.norm() - 1.0).abs());
        let active: Vec<usize> = (0..5).filter(|&c| g.0[c] != 0.0).collect();
        if active.len() > 2 || (active.len() == 2 && !adjacent(active[0], active[1])) {
            bad_support += 1;
        }
        let est = estimate_direction_from_gains(&g.0, &layout).unwrap();
        worst_trip = worst_trip.max(circular_distance_deg(est, theta));
    }
    let singles = [0.0, 30.0, -30.0, 110.0, -110.0].iter().all(|&t| {
        let g = pan_gains(t, &layout);
        g.0.iter().filter(|&&v| v == 1.0).count() == 1 && g.0.iter().filter(|&&v| v == 0.0).count() == 4
    });
    outcome(
        worst_norm <= VBAP_NORM_TOL && worst_trip <= VBAP_ROUND_TRIP_DEG && bad_support == 0 && singles,
        format!("norm err {worst_norm:.1e}, round trip {worst_trip:.1e} deg, bad supports {bad_support}, exact singles {singles}"),
    )
}

fn c3_downmix() -> Outcome {
    let mut rng = substream(3, "c3");
    let center: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut channels = vec![vec![0.0; 1000]; 5];
    channels[C] = center.clone();
    let st = downmix(&MultichannelAudio::new(44_100, channels).unwrap()).unwrap();
    let exact = (0..2).all(|s| st.channel(s).iter().zip(&center).all(|(o, c)| *o == 0.5 * c));

    let (x, y) = (noise(&mut rng, 5, 1000), noise(&mut rng, 5, 1000));
    let (a, b) = (0.37, -1.9);
    let combo = MultichannelAudio::new(
        44_100,
        x.channels().iter().zip(y.channels()).map(|(p, q)| p.iter().zip(q).map(|(u, v)| a * u + b * v).collect()).collect(),
    )
    .unwrap();
    let (dx, dy, dc) = (downmix(&x).unwrap(), downmix(&y).unwrap(), downmix(&combo).unwrap());
    let mut worst = 0.0f64;
    for s in 0..2 {
        for i in 0..1000 {
            let expect = a * dx.channel(s)[i] + b * dy.channel(s)[i];
            let scale = (0..5).map(|c| (a * x.channel(c)[i]).abs() + (b * y.channel(c)[i]).abs()).sum::<f64>();
            worst = worst.max((dc.channel(s)[i] - expect).abs() / (scale * f64::EPSILON));
        }
    }
    outcome(exact && worst <= DOWNMIX_ULPS, format!("center exact {exact}, linearity within {worst:.2} ulp of the summed magnitudes"))
}

fn c4_sd_sdr() -> Outcome {
    let mut rng = substream(4, "c4");
    let r: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let half: Vec<f64> = r.iter().map(|v| 0.5 * v).collect();
    let v_half = sd_sdr_samples(&half, &r).unwrap();
    let raw: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    let proj = raw.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let orth: Vec<f64> = raw.iter().zip(&r).map(|(a, b)| a - proj * b).collect();
    let scale = (rr / 100.0 / orth.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let est: Vec<f64> = r.iter().zip(&orth).map(|(a, n)| a + scale * n).collect();
    let v_noise = sd_sdr_samples(&est, &r).unwrap();
    outcome(
        v_half.abs() <= SDR_HALF_TOL_DB && (v_noise - 20.0).abs() <= SDR_NOISE_TOL_DB,
        format!("0.5 ref -> {v_half:.2e} dB, -20 dB orthogonal noise -> {v_noise:.9} dB"),
    )
}

fn c5_kl() -> Outcome {
    let mut rng = substream(5, "c5");
    let mut worst = 0.0f64;
    let mut nonneg = true;
    for _ in 0..20 {
        let dim = 4;
        let mu: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let closed = kl_divergence(&mu, &lv);
        nonneg &= closed >= 0.0;
        // E_q[log q(h) - log p(h)] with h = mu + sigma * e.
        let mut sum = 0.0;
        for _ in 0..KL_MC_DRAWS {
            for j in 0..dim {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                let h = mu[j] + (0.5 * lv[j]).exp() * e;
                sum += -0.5 * lv[j] - 0.5 * e * e + 0.5 * h * h;
            }
        }
        let mc = sum / KL_MC_DRAWS as f64;
        worst = worst.max((mc - closed).abs() / closed);
    }
    let zero = kl_divergence(&[0.0; 4], &[0.0; 4]);
    outcome(
        worst <= KL_MC_REL_TOL && nonneg && zero == 0.0,
        format!("worst MC rel diff {:.3}% over 20 pairs, KL(0,0) = {zero}", 100.0 * worst),
    )
}

fn song_example(arch: &ArchConfig, seed: u64) -> upmix::dataset::TrainingExample {
    let song = &make_tiny_corpus(seed, &TinyCorpusConfig { songs: 1, seconds: 0.1, ..Default::default() }).unwrap()[0];
    let layout = SpeakerLayout::default();
    let r = PanningConfig::new(vec![20.0, 140.0, 200.0, 300.0]).unwrap();
    let a = PanningConfig::new(vec![0.0, 90.0, 180.0, 270.0]).unwrap();
    let start = arch.segment_samples;
    synthesize_example(song, start..start + arch.segment_samples, &r, &a, &layout, &arch.stft).unwrap()
}

fn c6_gradient_check() -> Outcome {
    let arch = ArchConfig::tiny();
    let shape_ok = arch.bins() == 9 && arch.frames() == 8 && arch.latent_dim == 3 && arch.growth == 2;
    let params = ModelParams::init(&arch, &mut substream(6, "init")).unwrap();
    let ex = song_example(&arch, 6);
    let eps = [0.4, -1.1, 0.7];
    let start = Instant::now();
    let (_, grads) = elbo_loss_and_grad(&params, &ex, 1.0, &eps).unwrap();
    let target: Vec<f64> = ex.target.data().iter().map(|&v| compress_magnitude(v)).collect();
    // Forward-only loss assembled from the public encode/decode API.
    let loss = |p: &ModelParams| {
        let (mu, lv) = encode(p, &ex.enc_input).unwrap();
        let h = reparameterize(&mu, &lv, &eps).unwrap();
        let pred = decode(p, &ex.dec_stereo, &h).unwrap();
        let sq: f64 = pred.data().iter().zip(&target).map(|(&y, &t)| (compress_magnitude(y) - t).powi(2)).sum();
        sq / target.len() as f64 + kl_divergence(&mu, &lv)
    };
    let mut p = params.clone();
    let (mut worst, mut worst_name, mut count, mut refined) = (0.0f64, String::new(), 0, 0);
    for t in 0..params.tensors().len() {
        for i in 0..params.tensors()[t].data.len() {
            let orig = p.tensors()[t].data[i];
            let mut step = GRAD_FD_STEP;
            let fd = loop {
                let mut at = |k: f64| {
                    p.tensors_mut()[t].data[i] = orig + k * step;
                    loss(&p)
                };
                let (m2, m1, mh, ph, p1, p2) = (at(-2.0), at(-1.0), at(-0.5), at(0.5), at(1.0), at(2.0));
                let wide = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * step);
                let narrow = (m1 - 8.0 * mh + 8.0 * ph - p1) / (6.0 * step);
                // The two scales disagree when an activation kink lies inside.
                let kinked = (wide - narrow).abs() > (KINK_REL * wide.abs()).max(LOSS_NOISE / step);
                if !kinked || step < GRAD_FD_STEP / 2000.0 {
                    break wide;
                }
                step /= 8.0;
                refined += 1;
            };
            p.tensors_mut()[t].data[i] = orig;
            let an = grads[t][i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(GRAD_FLOOR);
            if rel > worst {
                worst = rel;
                worst_name = format!("{}[{i}] (fd {fd:.6e}, analytic {an:.6e})", params.tensors()[t].name);
            }
            count += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        shape_ok && worst < GRAD_REL_TOL && elapsed < GRAD_BUDGET,
        format!("{count} parameters ({refined} step refinements near kinks), worst rel err {worst:.2e} at {worst_name}, {:.1} s", elapsed.as_secs_f64()),
    )
}

/// Minimum-cost transport between integer supplies and demands of equal
/// total on a line, by successive shortest paths.
fn transport_cost(supply: &[i64], demand: &[i64]) -> i64 {
    let n = supply.len();
    // Nodes: source 0, supplies 1..=n, demands n+1..=2n, sink 2n+1.
    let nodes = 2 * n + 2;
    let sink = nodes - 1;
    let mut edges: Vec<(usize, usize, i64, i64)> = Vec::new();
    let add = |edges: &mut Vec<(usize, usize, i64, i64)>, u, v, cap, cost| {
        edges.push((u, v, cap, cost));
        edges.push((v, u, 0, -cost));
    };
    for i in 0..n {
        add(&mut edges, 0, 1 + i, supply[i], 0);
        add(&mut edges, 1 + n + i, sink, demand[i], 0);
        for j in 0..n {
            add(&mut edges, 1 + i, 1 + n + j, i64::MAX / 4, (i as i64 - j as i64).abs());
        }
    }
    let mut total = 0;
    loop {
        let mut dist = vec![i64::MAX; nodes];
        let mut prev = vec![usize::MAX; nodes];
        dist[0] = 0;
        for _ in 0..nodes {
            let mut changed = false;
            for (k, &(u, v, cap, cost)) in edges.iter().enumerate() {
                if cap > 0 && dist[u] != i64::MAX && dist[u] + cost < dist[v] {
                    dist[v] = dist[u] + cost;
                    prev[v] = k;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink] == i64::MAX {
            return total;
        }
        let mut push = i64::MAX;
        let mut v = sink;
        while v != 0 {
            let k = prev[v];
            push = push.min(edges[k].2);
            v = edges[k].0;
        }
        let mut v = sink;
        while v != 0 {
            let k = prev[v];
            edges[k].2 -= push;
            edges[k ^ 1].2 += push;
            v = edges[k].0;
        }
        total += push * dist[sink];
    }
}

fn compositions(total: i64, bins: usize) -> Vec<Vec<i64>> {
    if bins == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, bins - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

fn c7_wasserstein() -> Outcome {
    let (mut worst, mut cases) = (0.0f64, 0usize);
    let width = 0.5;
    for bins in 1..=8 {
        let masses: Vec<i64> = if bins <= 4 { vec![1, 2, 3] } else { vec![1, 2] };
        for &ma in &masses {
            for &mb in &masses {
                for a in compositions(ma, bins) {
                    for b in compositions(mb, bins) {
                        let p: Vec<f64> = a.iter().map(|&v| v as f64 / ma as f64).collect();
                        let q: Vec<f64> = b.iter().map(|&v| v as f64 / mb as f64).collect();
                        let fast = wasserstein_1d(&p, &q, width).unwrap();
                        // Scale both to the common total ma * mb.
                        let sa: Vec<i64> = a.iter().map(|v| v * mb).collect();
                        let sb: Vec<i64> = b.iter().map(|v| v * ma).collect();
                        let exact = transport_cost(&sa, &sb) as f64 / (ma * mb) as f64 * width;
                        worst = worst.max((fast - exact).abs());
                        cases += 1;
                    }
                }
            }
        }
    }
    let mut rng = substream(7, "c7");
    let hist = HistSpec::default();
    let mut identity_ok = true;
    let mut symmetric = true;
    for _ in 0..50 {
        let mut spec = || {
            let data = (0..5 * 17 * 9).map(|_| rng.gen_range(0.0..2.0f64).powi(3)).collect();
            upmix::dsp::MagnitudeSpectrogram::from_vec(5, 17, 9, data).unwrap()
        };
        let (x, y) = (spec(), spec());
        identity_ok &= wild(&x, &x, &hist).unwrap() == 0.0;
        let (xy, yx) = (wild(&x, &y, &hist).unwrap(), wild(&y, &x, &hist).unwrap());
        symmetric &= (xy - yx).abs() <= 1e-12 * xy.max(1.0) && xy >= 0.0;
    }
    outcome(
        worst <= OT_TOL && identity_ok && symmetric,
        format!("{cases} histogram pairs, worst |CDF - LP| {worst:.1e}; wild(x,x)=0 {identity_ok}, symmetric {symmetric}"),
    )
}

fn distinct_stems(len: usize) -> Vec<MultichannelAudio> {
    [0.013, 0.057, 0.171, 0.293]
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let samples = (0..len).map(|i| (i as f64 * f * std::f64::consts::TAU + k as f64).sin()).collect();
            MultichannelAudio::mono(44_100, samples).unwrap()
        })
        .collect()
}

fn c8_angle_round_trip() -> Outcome {
    let layout = SpeakerLayout::default();
    let stems = distinct_stems(4096);
    let mut worst = 0.0f64;
    for deg in 0..360 {
        let t = deg as f64;
        let cfg = PanningConfig::new(vec![t, t + 97.0, t + 181.0, t + 263.0]).unwrap();
        let mix = render_stems(&stems, &cfg, &layout).unwrap();
        let report = angle_difference_report(&cfg, &mix, &stems, &layout).unwrap();
        for d in report.per_stem_deg {
            worst = worst.max(d.unwrap_or(f64::INFINITY));
        }
    }
    outcome(worst <= ANGLE_TOL_DEG, format!("worst difference {worst:.2e} deg over 360 grid directions x 4 stems"))
}

fn c9_overfit() -> Outcome {
    let arch = ArchConfig::toy();
    let ex = song_example(&arch, 9);
    let params = ModelParams::init(&arch, &mut substream(9, "init")).unwrap();
    let cfg = TrainConfig { epochs: OVERFIT_STEPS, batch_size: 1, beta: 0.0, seed: 9, ..TrainConfig::default() };
    let out = match train(params, &[ex], &[], &cfg, None, None) {
        Ok(out) => out,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let recon: Vec<f64> = out.history.iter().map(|e| e.train_recon).collect();
    let (first, last) = (recon[0], *recon.last().unwrap());
    let finite = recon.iter().all(|v| v.is_finite());
    let window = 50;
    let trending = recon.chunks(window).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect::<Vec<_>>();
    let monotone = trending.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        finite && monotone && first / last >= OVERFIT_FACTOR,
        format!(
            "{} steps, recon {first:.3e} -> {last:.3e} ({:.0}x), {}-step means monotone {monotone}",
            recon.len(),
            first / last,
            window
        ),
    )
}

struct DeskRun {
    songs: Vec<StemSong>,
    manifest: Manifest,
    params: ModelParams,
    train_time: Duration,
    study: Result<SpreadSummary, String>,
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let songs = make_tiny_corpus(DESK_SEED, &TinyCorpusConfig { songs: DESK_SONGS, ..Default::default() }).unwrap();
        let arch = ArchConfig::toy();
        let mut cfg = CorpusConfig::new(DESK_SEED, arch.segment_samples, arch.stft);
        let test = 1.0 / DESK_SONGS as f64;
        cfg.split = [1.0 - 2.0 * test, test, test];
        cfg.segments_per_song = Some(DESK_SEGMENTS_PER_SONG);
        let manifest = plan_corpus(&songs, &cfg).unwrap();
        let train_set = synthesize_split(&songs, &manifest, Split::Train).unwrap();
        let val_set = synthesize_split(&songs, &manifest, Split::Val).unwrap();
        let init = ModelParams::init(&arch, &mut substream(DESK_SEED, "init")).unwrap();
        let tc = TrainConfig { epochs: DESK_EPOCHS, beta: DESK_BETA, seed: DESK_SEED, ..TrainConfig::default() };
        let params = train(init, &train_set, &val_set, &tc, None, None).unwrap().params;
        let train_time = start.elapsed();
        let study_cfg = StudyConfig { songs: None, pannings: 5, segments_per_cell: 4, seed: DESK_STUDY_SEED, ..Default::default() };
        let study = run_study(&params, &songs, &study_cfg, &SpeakerLayout::default()).map(|s| s.summary).map_err(|e| e.to_string());
        DeskRun { songs, manifest, params, train_time, study }
    })
}

fn c10_disentanglement() -> Outcome {
    let run = desk_run();
    match &run.study {
        Ok(s) => outcome(
            s.corr_same_panning > s.corr_same_song && s.ratio > 1.0 && run.train_time <= DESK_BUDGET,
            format!(
                "{DESK_SONGS} songs x 5 pannings, trained in {:.0} s; mean |r| same panning {:.4} vs same song {:.4}; spread by song {:.4} / by panning {:.4} = {:.2}",
                run.train_time.as_secs_f64(),
                s.corr_same_panning,
                s.corr_same_song,
                s.by_song,
                s.by_panning,
                s.ratio
            ),
        ),
        Err(e) => outcome(false, format!("study failed: {e}")),
    }
}

fn c11_comparative() -> Outcome {
    let run = desk_run();
    let layout = SpeakerLayout::default();
    let arch = run.params.config();
    let hist = HistSpec::default();
    let (mut wins, mut wild_wins, mut angle_wins, mut total) = (0, 0, 0, 0);
    for e in run.manifest.entries(Split::Test) {
        let song = run.songs.iter().find(|s| s.id() == e.song_id).unwrap();
        let stems = song.stem_audio(e.start..e.end);
        let reference = render_stems(&stems, &e.r, &layout).unwrap();
        let stereo = downmix(&reference).unwrap();
        let score = |est: &MultichannelAudio| {
            evaluate(&EvalInputs {
                id: &e.id,
                reference: &reference,
                estimate: est,
                stft: &arch.stft,
                hist: &hist,
                stems: Some((&stems, &e.r)),
                layout: &layout,
            })
            .unwrap()
        };
        let ours = score(&style_transfer(&run.params, &reference, &stereo).unwrap());
        let base = score(&baseline_upmix(&stereo).unwrap());
        let angle = |r: &upmix::metrics::MetricReport| r.mean_angle_diff_deg.unwrap_or(f64::INFINITY);
        let w = ours.wild < base.wild;
        let a = angle(&ours) < angle(&base);
        wild_wins += w as usize;
        angle_wins += a as usize;
        wins += (w && a) as usize;
        total += 1;
    }
    let share = wins as f64 / total as f64;
    outcome(
        total > 0 && share >= DESK_WIN_SHARE,
        format!(
            "style transfer beats baseline on both WILD and mean angle in {wins}/{total} test segments ({:.0}%; WILD alone {wild_wins}, angle alone {angle_wins})",
            100.0 * share
        ),
    )
}

fn c12_baseline_identity() -> Outcome {
    let mut rng = substream(12, "c12");
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let len = rng.gen_range(1..300);
        let scale = 10f64.powi(rng.gen_range(-6..6));
        let data = (0..2).map(|_| (0..len).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()).collect();
        let x = MultichannelAudio::new(44_100, data).unwrap();
        let back = downmix(&baseline_upmix(&x).unwrap()).unwrap();
        for (b, a) in back.channels().iter().flatten().zip(x.channels().iter().flatten()) {
            let expect = std::f64::consts::SQRT_2 * a;
            if expect != 0.0 {
                worst = worst.max((b - expect).abs() / expect.abs());
            }
        }
    }
    outcome(worst <= BASELINE_TOL, format!("worst rel deviation from sqrt(2) x {worst:.2e} over 200 random signals"))
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_upmix")).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`upmix {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    run_cli(dir, &["--seed", "13", "synth", "--tiny", "--songs", "3", "--seconds", "0.5", "--segments", "6", "--split", "0.34,0.33,0.33", "--out", "corpus"])?;
    run_cli(dir, &["--seed", "13", "train", "--corpus", "corpus", "--out-ckpt", "model.ckpt", "--epochs", "2"])?;
    let test = std::fs::read_dir(dir.join("corpus/test")).map_err(|e| e.to_string())?.next().ok_or("no test song")?;
    let song = test.map_err(|e| e.to_string())?.file_name().to_string_lossy().into_owned();
    let base = format!("corpus/test/{song}");
    run_cli(dir, &["transfer", "--stereo", &format!("{base}/stereo.wav"), "--style-ref", &format!("{base}/reference.wav"), "--ckpt", "model.ckpt", "--out", "upmix.wav"])?;
    run_cli(dir, &[
        "eval", "--ref", &format!("{base}/reference.wav"), "--est", "upmix.wav", "--stems-dir", &format!("{base}/stems"),
        "--ref-config", &format!("{base}/panning.json"), "--out-report", "report",
    ])?;
    ["upmix.wav", "report.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn c13_reproducibility() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let same = x == y;
            let sizes: Vec<String> = x.iter().map(|(f, bytes)| format!("{f} {} B", bytes.len())).collect();
            outcome(same, format!("synth -> train -> transfer -> eval twice: identical {same} ({})", sizes.join(", ")))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 13] = [
        (1, "STFT round trip", c1_stft_round_trip),
        (2, "VBAP invariants", c2_vbap_invariants),
        (3, "downmix formula", c3_downmix),
        (4, "SD-SDR closed forms", c4_sd_sdr),
        (5, "KL closed form vs Monte Carlo", c5_kl),
        (6, "ELBO gradient check", c6_gradient_check),
        (7, "Wasserstein vs transport LP", c7_wasserstein),
        (8, "angle estimation round trip", c8_angle_round_trip),
        (9, "overfit sanity", c9_overfit),
        (10, "desk-scale disentanglement", c10_disentanglement),
        (11, "desk-scale style transfer vs baseline", c11_comparative),
        (12, "baseline identity", c12_baseline_identity),
        (13, "end-to-end reproducibility", c13_reproducibility),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {:?}", e.downcast_ref::<String>().map(String::as_str).or(e.downcast_ref::<&str>().copied()))));
        failed += !result.pass as usize;
        println!(
            "criterion {n:>2} [{}] {name}: {} ({:.1} s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
