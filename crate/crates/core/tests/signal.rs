use hemo::metrics::stats::{chi_square_pvalue, ks_uniform};
use hemo::population::{generate_dataset, read_dataset, GenerateOptions, PriorSpec};
use hemo::signal::{
    apply_noise, finalize_dataset, read_finalized, Modality, NoiseSpec, Split, WaveformSegment, SAMPLE_RATE, SEGMENT_LEN,
    SNR_SATURATION_DB,
};
use hemo::solver::SolverConfig;
use hemo::vascular::reference_network;

fn sine_segment() -> WaveformSegment {
    WaveformSegment {
        samples: (0..SEGMENT_LEN).map(|t| (t as f64 * 0.07).sin() + 0.3).collect(),
        sample_rate: SAMPLE_RATE,
        modality: Modality::Apw,
        subject_id: 0,
        noise: Default::default(),
        crop_offset: 0,
    }
}

#[test]
fn noise_branch_frequencies_match_the_spec() {
    let seg = sine_segment();
    let spec = NoiseSpec::default();
    let n = 100_000u64;
    let mut counts = [[0usize; 2]; 2];
    let mut fractions = Vec::new();
    let mut gauss = 0.0;
    let std = hemo::signal::power(&seg.samples).sqrt();
    for seed in 0..n {
        let out = apply_noise(&seg, &spec, seed).unwrap();
        let add = out.noise.additive.as_ref();
        counts[add.is_some() as usize][out.noise.flipped as usize] += 1;
        if let Some(a) = add {
            fractions.push((a.end - a.start) as f64 / SEGMENT_LEN as f64);
            gauss += a.gaussian_sigma / std;
        }
    }
    // Independent Bernoulli branches: chi-square over the 2×2 table.
    let expected = [[0.2 * 0.7, 0.2 * 0.3], [0.8 * 0.7, 0.8 * 0.3]];
    let mut chi2 = 0.0;
    for a in 0..2 {
        for f in 0..2 {
            let e = expected[a][f] * n as f64;
            chi2 += (counts[a][f] as f64 - e).powi(2) / e;
        }
    }
    assert!(chi_square_pvalue(chi2, 3) > 0.001, "{counts:?}");

    let w = spec.window_fraction;
    let u: Vec<f64> = fractions.iter().map(|f| (f - w.low) / (w.high - w.low)).collect();
    // Rounding to whole samples makes the statistic slightly lumpy.
    assert!(ks_uniform(&u) > 0.001);
    let mean = gauss / fractions.len() as f64;
    assert!((mean - spec.gaussian_intensity_mean).abs() < 0.02, "{mean}");
}

#[test]
fn finalize_end_to_end() {
    let raw_dir = tempfile::tempdir().unwrap();
    let opts = GenerateOptions {
        solver: SolverConfig {
            duration: 6.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let meta = generate_dataset(raw_dir.path(), 10, 5, &PriorSpec::default(), &reference_network(), &opts, 4).unwrap();
    let raw = read_dataset(raw_dir.path()).unwrap();
    assert!(meta.accepted >= 5, "only {} accepted", meta.accepted);

    let out = tempfile::tempdir().unwrap();
    let fo = hemo::signal::FinalizeOptions {
        segments_per_subject: 2,
        seed: 11,
        ..Default::default()
    };
    let written = finalize_dataset(&raw, Some("abc".into()), out.path(), &fo).unwrap();
    let back = read_finalized(out.path()).unwrap();
    assert_eq!(back.metadata, written);
    assert_eq!(back.apw.len(), 2 * raw.records.len());
    assert_eq!(back.ppg.len(), 2 * raw.records.len());

    let split = &back.metadata.split;
    let total = split.train.len() + split.validation.len() + split.test.len();
    assert_eq!(total, raw.records.len());
    for m in [Modality::Apw, Modality::Ppg] {
        let recs = back.modality(m);
        let n_split: usize = [Split::Train, Split::Validation, Split::Test].iter().map(|&s| back.split(m, s).len()).sum();
        assert_eq!(n_split, recs.len());
        for r in recs {
            assert_eq!(r.samples.len(), SEGMENT_LEN);
            assert!(r.samples.iter().chain(&r.clean).all(|v| v.is_finite()));
            if !r.additive {
                assert_eq!(r.snr_db, SNR_SATURATION_DB);
            }
            let subject = raw.records.iter().find(|p| p.subject.subject_id == r.subject_id).unwrap();
            assert_eq!(Some(r.biomarkers), subject.subject.biomarkers());
        }
    }

    // Same inputs, same bytes.
    let again = tempfile::tempdir().unwrap();
    finalize_dataset(&raw, Some("abc".into()), again.path(), &fo).unwrap();
    for f in ["apw.hsg", "ppg.hsg", "metadata.json"] {
        assert_eq!(std::fs::read(out.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap(), "{f}");
    }

    let path = out.path().join("ppg.hsg");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[100] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert!(read_finalized(out.path()).is_err());
}
