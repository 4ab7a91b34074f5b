//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line
//! (written straight to stderr so it shows even when output is captured)
//! and then asserts the verdict.
//!
//! Desk-scale training uses batch multiple 64 in place of 2048 to fit the
//! runtime budget on one core.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use geoshape_core::autodiff::Tensor;
use geoshape_core::channel::{
    calibrate_nlin, nlin_variance, ChannelModel, LinkConfig, ModelKind, NlinCoefficients, NlinFit,
};
use geoshape_core::metrics::{evaluate_model, mi_gaussian_auxiliary};
use geoshape_core::ssf::{calibration_points, modulate, propagate_span, run_transmission, SsfConfig, WdmSignal};
use geoshape_core::trainer::{build_autoencoder, stratified_labels, train, TrainConfig, TrainResult};
use geoshape_core::Constellation;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(id: u32, title: &str, pass: bool, detail: &str, started: Instant) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {id}: {verdict} [{title}] {detail} ({:.1} s)",
        started.elapsed().as_secs_f64()
    );
    pass
}

// ---------------------------------------------------------------- shared runs

fn calibration(n_spans: usize) -> NlinFit {
    let cfg = SsfConfig { enable_ase: false, ..SsfConfig::desk() };
    let qams: Vec<Constellation> = [4, 16, 64].iter().map(|&m| Constellation::qam(m).unwrap()).collect();
    let points = calibration_points(&qams, &[0.0, 3.0, 6.0], &cfg, n_spans).unwrap();
    calibrate_nlin(&points).unwrap()
}

fn calibration_10_spans() -> &'static NlinFit {
    static FIT: OnceLock<NlinFit> = OnceLock::new();
    FIT.get_or_init(|| calibration(10))
}

fn calibration_1_span() -> &'static NlinFit {
    static FIT: OnceLock<NlinFit> = OnceLock::new();
    FIT.get_or_init(|| calibration(1))
}

const SPANS: usize = 10;
const POWER_LR: f64 = 0.01;

fn link(n_spans: usize) -> LinkConfig {
    SsfConfig::desk().link(n_spans)
}

fn model(kind: ModelKind, coeffs: NlinCoefficients, power_dbm: f64) -> ChannelModel {
    ChannelModel::for_link(kind, &link(SPANS), coeffs, power_dbm).unwrap()
}

fn desk_train(order: usize, channel: ChannelModel, iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_schedule: vec![(0, 8), (100, 64)],
        max_iterations: iterations,
        ..TrainConfig::new(order, channel)
    }
}

fn joint(order: usize, channel: ChannelModel, init_dbm: f64) -> TrainResult {
    let cfg = TrainConfig {
        train_launch_power: true,
        initial_launch_power_dbm: Some(init_dbm),
        power_learning_rate: Some(POWER_LR),
        ..desk_train(order, channel, 4000)
    };
    train(&cfg).unwrap()
}

const JOINT_INITS: [f64; 3] = [-6.0, -3.0, 0.0];

/// NLIN-trained M=64 constellations with joint power, one per initialization.
fn nlin_joint_runs() -> &'static Vec<TrainResult> {
    static RUNS: OnceLock<Vec<TrainResult>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let k = calibration_10_spans().coefficients();
        JOINT_INITS.iter().map(|&p| joint(64, model(ModelKind::Nlin, k, p), p)).collect()
    })
}

fn model_mi_4d(c: &Constellation, m: &ChannelModel) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    evaluate_model(c, m, 1 << 17, &mut rng).unwrap().mi.mi_bits_per_4d
}

// ------------------------------------------------------------- criterion 1

/// Plain-loop forward pass of the autoencoder loss. Returns the loss and
/// every ReLU pre-activation so finite differences can avoid kinks.
struct Net {
    order: usize,
    hidden: usize,
    coeffs: NlinCoefficients,
    sigma2_ase: f64,
    tx_rel: f64,
}

impl Net {
    fn loss(&self, p: &[Tensor], labels: &[usize], noise: &Tensor) -> (f64, Vec<f64>) {
        let (m, h) = (self.order, self.hidden);
        let (enc0w, enc0b, encw, encb, dec0w, dec0b, decw, decb, pdbm) =
            (&p[0], &p[1], &p[2], &p[3], &p[4], &p[5], &p[6], &p[7], p[8][[0, 0]]);
        let mut kinks = Vec::new();
        let mut points = vec![[0.0; 2]; m];
        for (s, pt) in points.iter_mut().enumerate() {
            let hid: Vec<f64> = (0..h)
                .map(|j| {
                    let z = enc0w[[s, j]] + enc0b[[0, j]];
                    kinks.push(z);
                    z.max(0.0)
                })
                .collect();
            for d in 0..2 {
                pt[d] = encb[[0, d]] + (0..h).map(|j| hid[j] * encw[[j, d]]).sum::<f64>();
            }
        }
        let b = labels.len();
        let raw: Vec<[f64; 2]> = labels.iter().map(|&l| points[l]).collect();
        let ms = raw.iter().map(|x| x[0] * x[0] + x[1] * x[1]).sum::<f64>() / b as f64;
        let x: Vec<[f64; 2]> = raw.iter().map(|v| [v[0] / ms.sqrt(), v[1] / ms.sqrt()]).collect();
        let moment = |k: i32| x.iter().map(|v| (v[0] * v[0] + v[1] * v[1]).powi(k)).sum::<f64>() / b as f64;
        let (m2, m4, m6) = (moment(1), moment(2), moment(3));
        let (mu4, mu6) = (m4 / (m2 * m2), m6 / (m2 * m2 * m2));
        let pmw = (pdbm / 10.0 * std::f64::consts::LN_10).exp();
        let factor = self.coeffs.kappa0 + self.coeffs.kappa1 * (mu4 - 2.0) + self.coeffs.kappa2 * (mu6 - 6.0);
        let nl = (pmw * pmw * pmw * factor).max(1e-12);
        let sigma = ((nl + self.sigma2_ase) / pmw + self.tx_rel).sqrt();
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let y = [x[r][0] + sigma * noise[[r, 0]], x[r][1] + sigma * noise[[r, 1]]];
            let hid: Vec<f64> = (0..h)
                .map(|j| {
                    let z = dec0b[[0, j]] + y[0] * dec0w[[0, j]] + y[1] * dec0w[[1, j]];
                    kinks.push(z);
                    z.max(0.0)
                })
                .collect();
            let logits: Vec<f64> =
                (0..m).map(|k| decb[[0, k]] + (0..h).map(|j| hid[j] * decw[[j, k]]).sum::<f64>()).collect();
            let top = logits.iter().cloned().fold(f64::MIN, f64::max);
            let lse = top + logits.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            total += lse - logits[label];
        }
        (total / b as f64, kinks)
    }
}

fn same_side(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(u, v)| (*u > 0.0) == (*v > 0.0))
}

/// Relative error with denominator max(|a|, |b|, 1e-6). The five-point
/// difference carries about 1e-12 of absolute roundoff (eps * loss / h), so
/// partials of dead ReLU units, exactly zero analytically, read as ~1e-12.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn criterion_01_gradient_correctness() {
    let started = Instant::now();
    let coeffs = NlinCoefficients { kappa0: 0.0256, kappa1: 0.0118, kappa2: -4.0e-5 };
    let (order, hidden) = (4, 16);
    let mut worst: f64 = 0.0;
    let mut forward_gap: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let power = rng.random_range(-3.0..3.0);
        let mut channel = model(ModelKind::Nlin, coeffs, power);
        channel.tx_awgn_snr_db = Some(25.0);
        let cfg = TrainConfig {
            layers: 1,
            hidden_units: hidden,
            seed,
            train_launch_power: true,
            ..TrainConfig::new(order, channel.clone())
        };
        let ae = build_autoencoder(&cfg).unwrap();
        let labels = stratified_labels(order, 8);
        let noise = Tensor::from_shape_fn((labels.len(), 2), |_| {
            rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2
        });
        let net = Net {
            order,
            hidden,
            coeffs,
            sigma2_ase: channel.sigma2_ase_mw,
            tx_rel: channel.tx_relative_variance(),
        };
        let ids: Vec<_> = ae.store().ids().collect();
        let names: Vec<&str> = ids.iter().map(|&id| ae.store().name(id)).collect();
        assert_eq!(names, ["enc0.w", "enc0.b", "enc_out.w", "enc_out.b", "dec0.w", "dec0.b", "dec_out.w", "dec_out.b", "launch_power_dbm"]);
        let params: Vec<Tensor> = ids.iter().map(|&id| ae.store().get(id).clone()).collect();
        let (loss, grads) = ae.loss_and_gradients(&labels, &noise).unwrap();
        let (oracle_loss, kinks) = net.loss(&params, &labels, &noise);
        forward_gap = forward_gap.max(rel_err(loss, oracle_loss));

        for (t, &id) in ids.iter().enumerate() {
            let analytic = grads.get(id);
            for idx in 0..params[t].len() {
                let (r, c) = (idx / params[t].ncols(), idx % params[t].ncols());
                let theta = params[t][[r, c]];
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p[t][[r, c]] = theta + delta;
                    net.loss(&p, &labels, &noise)
                };
                let mut h = 1e-4 * theta.abs().max(1.0);
                let numeric = loop {
                    let pts: Vec<(f64, Vec<f64>)> = [-2.0, -1.0, 1.0, 2.0].iter().map(|&k| eval(k * h)).collect();
                    if pts.iter().all(|(_, k)| same_side(k, &kinks)) || h < 1e-10 {
                        break (pts[0].0 - 8.0 * pts[1].0 + 8.0 * pts[2].0 - pts[3].0) / (12.0 * h);
                    }
                    h /= 8.0;
                };
                worst = worst.max(rel_err(analytic[[r, c]], numeric));
                checked += 1;
            }
        }
    }
    let pass = worst < 1e-5 && forward_gap < 1e-12 && started.elapsed().as_secs() < 60;
    let detail = format!("{checked} partials over 100 seeds, worst relative error {worst:.2e}, forward gap {forward_gap:.1e}");
    assert!(report(1, "gradient correctness", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 2

/// Gauss-Hermite nodes and weights for weight exp(-t^2), via the
/// eigen-decomposition of the Jacobi matrix.
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mu0 = std::f64::consts::PI.sqrt();
    (0..n).map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2))).collect()
}

/// Gaussian-auxiliary MI in bit/2D by product quadrature over the complex
/// noise n ~ CN(0, sigma2).
fn mi_quadrature(points: &[Complex64], sigma2: f64, nodes: &[(f64, f64)]) -> f64 {
    let m = points.len();
    let s = sigma2.sqrt();
    let mut acc = 0.0;
    for &xi in points {
        for &(ta, wa) in nodes {
            for &(tb, wb) in nodes {
                let n = Complex64::new(s * ta, s * tb);
                let terms: Vec<f64> =
                    points.iter().map(|&xj| -((xi - xj + n).norm_sqr() - n.norm_sqr()) / sigma2).collect();
                let top = terms.iter().cloned().fold(f64::MIN, f64::max);
                let lse = top + terms.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
                acc += wa * wb / std::f64::consts::PI * lse;
            }
        }
    }
    (m as f64).log2() - acc / (m as f64 * std::f64::consts::LN_2)
}

#[test]
fn criterion_02_mi_oracle_equivalence() {
    let started = Instant::now();
    let nodes = gauss_hermite(60);
    let mut worst: f64 = 0.0;
    let mut cells = Vec::new();
    for order in [4, 16] {
        let c = Constellation::qam(order).unwrap();
        for snr_db in [0.0, 5.0, 10.0, 15.0, 20.0] {
            let sigma2 = 10f64.powf(-snr_db / 10.0);
            let oracle = mi_quadrature(c.points(), sigma2, &nodes);
            let mut rng = ChaCha8Rng::seed_from_u64(order as u64 * 100 + snr_db as u64);
            let est = mi_gaussian_auxiliary(&c, sigma2, 1 << 17, &mut rng).unwrap().mi_bits_per_2d;
            worst = worst.max((est - oracle).abs());
            cells.push(format!("M{order}@{snr_db}dB {est:.4}/{oracle:.4}"));
        }
    }
    let pass = worst < 0.01 && started.elapsed().as_secs() < 120;
    let detail = format!("max |delta| {worst:.4} bit/2D; {}", cells.join(", "));
    assert!(report(2, "MI oracle equivalence", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 3

fn cw(cfg: &SsfConfig, power_mw: f64) -> WdmSignal {
    let n = cfg.n_samples();
    WdmSignal {
        fields: [vec![Complex64::new(power_mw.sqrt(), 0.0); n], vec![Complex64::new(0.0, 0.0); n]],
        sample_rate_hz: cfg.sample_rate_hz(),
        channel_offsets_hz: vec![0.0],
        symbols: vec![],
    }
}

#[test]
fn criterion_03_ssf_physics_oracles() {
    let started = Instant::now();
    let desk = SsfConfig::desk();
    let qam16 = Constellation::qam(16).unwrap();

    // Kerr phase of a continuous wave on a lossy span without dispersion.
    let cfg = SsfConfig { dispersion_ps_nm_km: 0.0, ..desk.clone() };
    let mut sig = cw(&cfg, 1.0);
    propagate_span(&mut sig, &cfg).unwrap();
    let alpha = cfg.alpha_per_km();
    let l_eff = (1.0 - (-alpha * cfg.span_length_km).exp()) / alpha;
    let expected = 8.0 / 9.0 * cfg.gamma_per_w_km * 1e-3 * l_eff;
    let spm = (sig.fields[0][0].arg() / expected - 1.0).abs();

    // Dispersion only.
    let cfg = SsfConfig { gamma_per_w_km: 0.0, attenuation_db_per_km: 0.0, ..desk.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut sig = modulate(&qam16, &cfg, 0.0, &mut rng).unwrap();
    let before = sig.energy();
    propagate_span(&mut sig, &cfg).unwrap();
    let energy = (sig.energy() / before - 1.0).abs();

    // Loss only: 0.2 dB/km over 100 km.
    let cfg = SsfConfig { gamma_per_w_km: 0.0, dispersion_ps_nm_km: 0.0, ..desk.clone() };
    let mut sig = modulate(&qam16, &cfg, 0.0, &mut rng).unwrap();
    let before = sig.energy();
    propagate_span(&mut sig, &cfg).unwrap();
    let loss_db = 10.0 * (sig.energy() / before).log10();

    // Chromatic dispersion inverted at the receiver, no noise or nonlinearity.
    let cfg = SsfConfig { gamma_per_w_km: 0.0, enable_ase: false, ..desk };
    let b2b = run_transmission(&qam16, &cfg, 1, 0.0).unwrap().snr_eff_db;

    let pass = spm < 1e-6 && energy < 1e-9 && (loss_db + 20.0).abs() < 1e-9 && b2b >= 50.0 && started.elapsed().as_secs() < 120;
    let detail = format!(
        "SPM phase rel error {spm:.1e}, dispersion energy error {energy:.1e}, loss {loss_db:.12} dB, CD back-to-back {b2b:.1} dB"
    );
    assert!(report(3, "SSF physics oracles", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_gn_reduction() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut snr_mismatch = 0;
    for _ in 0..1000 {
        let p = 10f64.powf(rng.random_range(-3.0..1.5));
        let k = NlinCoefficients {
            kappa0: 10f64.powf(rng.random_range(-5.0..-1.0)),
            kappa1: rng.random_range(-0.1..0.1),
            kappa2: rng.random_range(-0.1..0.1),
        };
        let oracle = (k.kappa0 * (p * p * p)).max(1e-12);
        let got = nlin_variance(p, 2.0, 6.0, &k).unwrap();
        worst = worst.max((got - oracle).abs() / oracle);
        let power_dbm = 10.0 * p.log10();
        let gn = ChannelModel::new(ModelKind::Gn, 1e-3, k, power_dbm).effective_snr(1.3, 1.9).unwrap();
        let nlin = ChannelModel::new(ModelKind::Nlin, 1e-3, k, power_dbm).effective_snr(2.0, 6.0).unwrap();
        if gn != nlin {
            snr_mismatch += 1;
        }
    }
    let pass = worst <= 4.0 * f64::EPSILON && snr_mismatch == 0;
    let detail = format!("1000 draws, worst relative deviation {worst:.1e}, SNR mismatches {snr_mismatch}");
    assert!(report(4, "GN reduction", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 5

#[test]
fn criterion_05_ring_at_high_power() {
    let started = Instant::now();
    let fit = calibration_10_spans();
    let k = fit.coefficients();
    let gn = train(&desk_train(64, model(ModelKind::Gn, k, 9.5), 3000)).unwrap();
    let nlin = train(&desk_train(64, model(ModelKind::Nlin, k, 9.5), 3000)).unwrap();
    let (g, n) = (gn.constellation.moments().mu4, nlin.constellation.moments().mu4);
    let pass = fit.kappa1 > 0.0 && n <= 0.9 * g;
    let detail = format!("kappa1 {:.3e}, mu4 GN-trained {g:.4}, NLIN-trained {n:.4} ({:+.1}%)", fit.kappa1, 100.0 * (n / g - 1.0));
    assert!(report(5, "ring behavior at high power", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 6

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn criterion_06_moment_trend() {
    let started = Instant::now();
    let k = calibration_10_spans().coefficients();
    let powers = [-2.0, 0.5, 3.0, 5.5, 8.0];
    let mu4: Vec<f64> = powers
        .iter()
        .map(|&p| train(&desk_train(64, model(ModelKind::Nlin, k, p), 4000)).unwrap().constellation.moments().mu4)
        .collect();
    let rho = spearman(&powers, &mu4);
    let pass = rho <= -0.8;
    let detail = format!(
        "Spearman {rho:.2}; mu4 {}",
        powers.iter().zip(&mu4).map(|(p, m)| format!("{p} dBm {m:.3}")).collect::<Vec<_>>().join(", ")
    );
    assert!(report(6, "moment trend", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 7

/// Launch power maximizing the model SNR for fixed moments, on a 0.01 dB grid.
fn grid_optimum(m: &ChannelModel, mu4: f64, mu6: f64) -> f64 {
    (0..2001)
        .map(|i| -15.0 + 0.01 * i as f64)
        .map(|p| (p, m.with_power_dbm(p).effective_snr(mu4, mu6).unwrap()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn criterion_07_joint_power_optimization() {
    let started = Instant::now();
    let fit = calibration_10_spans();

    let gn = model(ModelKind::Gn, NlinCoefficients::gn(fit.kappa0), 0.0);
    let analytic = 10.0 * (gn.sigma2_ase_mw / (2.0 * fit.kappa0)).powf(1.0 / 3.0).log10();
    let gn_runs: Vec<f64> =
        JOINT_INITS.iter().map(|&p| joint(16, gn.with_power_dbm(p), p).final_launch_power_dbm).collect();
    let gn_err = gn_runs.iter().map(|p| (p - analytic).abs()).fold(0.0, f64::max);

    let nlin = model(ModelKind::Nlin, fit.coefficients(), 0.0);
    let mut nlin_err: f64 = 0.0;
    let mut nlin_desc = Vec::new();
    for r in nlin_joint_runs() {
        let m = r.constellation.moments();
        let oracle = grid_optimum(&nlin, m.mu4, m.mu6);
        nlin_err = nlin_err.max((r.final_launch_power_dbm - oracle).abs());
        nlin_desc.push(format!("{:.3}/{oracle:.2}", r.final_launch_power_dbm));
    }
    let pass = gn_err <= 0.25 && nlin_err <= 0.25;
    let detail = format!(
        "inits {JOINT_INITS:?} dBm; kappa0-only: converged {:?} vs analytic {analytic:.3} (max err {gn_err:.3} dB); \
         calibrated: converged/grid {} (max err {nlin_err:.3} dB)",
        gn_runs.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>(),
        nlin_desc.join(", ")
    );
    assert!(report(7, "joint power optimization", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_shaping_gain_vs_qam() {
    let started = Instant::now();
    let k = calibration_10_spans().coefficients();
    let nlin = |p: f64| model(ModelKind::Nlin, k, p);

    let learned = &nlin_joint_runs()[1];
    let p_opt = learned.final_launch_power_dbm;
    let learned_mi = model_mi_4d(&learned.constellation, &nlin(p_opt));

    let qam = Constellation::qam(64).unwrap();
    let (qam_mi, qam_p) = (0..121)
        .map(|i| -8.0 + 0.1 * i as f64)
        .map(|p| (model_mi_4d(&qam, &nlin(p)), p))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();

    let high = p_opt + 3.0;
    let nlin_high = train(&desk_train(64, nlin(high), 4000)).unwrap();
    let gn_high = train(&desk_train(64, model(ModelKind::Gn, k, high), 4000)).unwrap();
    let mi_nlin_high = model_mi_4d(&nlin_high.constellation, &nlin(high));
    let mi_gn_high = model_mi_4d(&gn_high.constellation, &nlin(high));

    let gain = learned_mi - qam_mi;
    let margin = mi_nlin_high - mi_gn_high;
    let pass = gain >= 0.05 && margin > 0.0 && started.elapsed().as_secs() < 30 * 60;
    let detail = format!(
        "NLIN-trained {learned_mi:.4} bit/4D at {p_opt:.2} dBm vs best 64-QAM {qam_mi:.4} at {qam_p:.1} dBm (gain {gain:+.4}); \
         at {high:.2} dBm NLIN-trained {mi_nlin_high:.4} vs GN-trained {mi_gn_high:.4} (margin {margin:+.4})"
    );
    assert!(report(8, "shaping gain vs QAM", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------- criterion 9

#[test]
fn criterion_09_model_ssf_consistency() {
    let started = Instant::now();
    let k = calibration_1_span().coefficients();
    let cfg = SsfConfig::desk();
    let qam = Constellation::qam(64).unwrap();
    let m = qam.moments();
    let mut worst: f64 = 0.0;
    let mut cells = Vec::new();
    for i in 0..=10 {
        let p = -4.0 + i as f64;
        let predicted = ChannelModel::for_link(ModelKind::Nlin, &cfg.link(1), k, p)
            .unwrap()
            .effective_snr(m.mu4, m.mu6)
            .unwrap();
        let measured = run_transmission(&qam, &cfg, 1, p).unwrap().snr_eff_db;
        worst = worst.max((predicted - measured).abs());
        cells.push(format!("{p}:{:+.3}", predicted - measured));
    }
    let pass = worst <= 0.5;
    let detail = format!("max |model - SSF| {worst:.3} dB over -4..6 dBm; {}", cells.join(" "));
    assert!(report(9, "model/SSF consistency", pass, &detail, started), "{detail}");
}

// ------------------------------------------------------------ criterion 10

#[test]
fn criterion_10_determinism() {
    let started = Instant::now();
    let k = NlinCoefficients { kappa0: 0.0256, kappa1: 0.0118, kappa2: -4.0e-5 };
    let cfg = TrainConfig {
        seed: 77,
        train_launch_power: true,
        power_learning_rate: Some(POWER_LR),
        ..desk_train(16, model(ModelKind::Nlin, k, -2.0), 400)
    };
    let (a, b) = (train(&cfg).unwrap(), train(&cfg).unwrap());
    let bits = |r: &TrainResult| -> Vec<[u64; 4]> {
        r.trace.iter().map(|t| [t.loss.to_bits(), t.mu4.to_bits(), t.mu6.to_bits(), t.power_dbm.to_bits()]).collect()
    };
    let same_training = bits(&a) == bits(&b) && a.constellation.points() == b.constellation.points();

    let ssf = SsfConfig { seed: 5, n_symbols: 1 << 12, ..SsfConfig::desk() };
    let q = Constellation::qam(64).unwrap();
    let (x, y) = (run_transmission(&q, &ssf, 2, 3.0).unwrap(), run_transmission(&q, &ssf, 2, 3.0).unwrap());
    let same_ssf = x == y && x.snr_eff_db.to_bits() == y.snr_eff_db.to_bits();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut again = ChaCha8Rng::seed_from_u64(9);
    let same_signal =
        modulate(&q, &ssf, 1.0, &mut rng).unwrap().fields == modulate(&q, &ssf, 1.0, &mut again).unwrap().fields;

    let pass = same_training && same_ssf && same_signal;
    let detail = format!(
        "training trace ({} iterations) identical: {same_training}; SSF result identical: {same_ssf}; modulated field identical: {same_signal}",
        a.trace.len()
    );
    assert!(report(10, "determinism", pass, &detail, started), "{detail}");
}
