use geoshape_core::ssf::{ase_limited_snr_db, run_transmission, SsfConfig};
use geoshape_core::Constellation;

fn snr(c: &Constellation, cfg: &SsfConfig, spans: usize, p: f64) -> f64 {
    run_transmission(c, cfg, spans, p).unwrap().snr_eff_db
}

#[test]
fn constant_modulus_qpsk_beats_qam64_at_high_power() {
    let cfg = SsfConfig::desk();
    let qpsk = snr(&Constellation::qam(4).unwrap(), &cfg, 1, 6.0);
    let qam64 = snr(&Constellation::qam(64).unwrap(), &cfg, 1, 6.0);
    assert!(qpsk > qam64 + 0.3, "qpsk {qpsk} qam64 {qam64}");
}

#[test]
fn power_sweep_has_one_interior_maximum() {
    let cfg = SsfConfig::desk();
    let c = Constellation::qam(64).unwrap();
    let powers: Vec<f64> = (0..9).map(|i| -6.0 + 2.0 * i as f64).collect();
    let s: Vec<f64> = powers.iter().map(|&p| snr(&c, &cfg, 1, p)).collect();
    let peak = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(0 < peak && peak < s.len() - 1, "{s:?}");
    assert!(s[..=peak].windows(2).all(|w| w[1] > w[0]), "{s:?}");
    assert!(s[peak..].windows(2).all(|w| w[1] < w[0]), "{s:?}");
}

#[test]
fn doubling_spans_costs_three_db_in_the_linear_regime() {
    let cfg = SsfConfig::desk();
    let c = Constellation::qam(16).unwrap();
    let one = snr(&c, &cfg, 1, -6.0);
    let two = snr(&c, &cfg, 2, -6.0);
    assert!((one - two - 10.0 * 2f64.log10()).abs() < 0.2, "{one} {two}");
}

#[test]
fn halving_the_step_barely_moves_the_snr() {
    let coarse = SsfConfig::desk();
    let fine = SsfConfig { step_km: coarse.step_km / 2.0, ..coarse.clone() };
    let c = Constellation::qam(64).unwrap();
    for p in [0.0, 4.0] {
        let (a, b) = (snr(&c, &coarse, 1, p), snr(&c, &fine, 1, p));
        assert!((a - b).abs() < 0.05, "{p} dBm: {a} vs {b}");
    }
}

#[test]
fn high_power_shows_nonlinear_penalty() {
    let cfg = SsfConfig::desk();
    let c = Constellation::qam(64).unwrap();
    let p = 8.0;
    let measured = snr(&c, &cfg, 1, p);
    let linear = ase_limited_snr_db(&cfg, 1, p).unwrap();
    assert!(measured < linear - 3.0, "measured {measured} linear {linear}");
}
