use proptest::prelude::*;

use flowsvc::dsp::{istft, stft, AudioBuffer, StftConfig};
use flowsvc::features::f0::{f0_bin, f0_indices, shift_f0, F0Contour, F0_BINS, UNVOICED_ROW};
use flowsvc::features::speaker::SpeakerEmbedding;
use flowsvc::eval::speaker_cosine;

fn contour() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 80.0f64..600.0], 1..60)
        .prop_filter("needs a voiced frame", |v| v.iter().any(|&f| f > 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shift_f0_moves_the_voiced_mean_and_keeps_voicing(src in contour(), tgt in contour()) {
        let (s, t) = (F0Contour::from_hz(src).unwrap(), F0Contour::from_hz(tgt).unwrap());
        let out = shift_f0(&s, &t).unwrap();
        prop_assert_eq!(&out.voiced, &s.voiced);
        let delta = t.voiced_mean().unwrap() - s.voiced_mean().unwrap();
        for ((&f, &v), &o) in s.f0_hz.iter().zip(&s.voiced).zip(&out.f0_hz) {
            if v {
                prop_assert_eq!(o, (f + delta).clamp(50.0, 1100.0));
            } else {
                prop_assert_eq!(o, 0.0);
            }
        }
    }

    #[test]
    fn f0_rows_are_monotone_and_in_range(a in 50.0f64..1100.0, b in 50.0f64..1100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(f0_bin(lo) <= f0_bin(hi));
        prop_assert!(f0_bin(hi) < F0_BINS);
        let rows = f0_indices(&F0Contour::from_hz(vec![0.0, lo]).unwrap());
        prop_assert_eq!(rows[0], UNVOICED_ROW);
        prop_assert_eq!(rows[1], f0_bin(lo));
    }

    #[test]
    fn stft_inverts_arbitrary_signals(samples in prop::collection::vec(-1.0f64..1.0, 1200..3000)) {
        let cfg = StftConfig::default();
        let x = AudioBuffer::new(samples, 16000).unwrap();
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg, x.len(), 16000).unwrap();
        prop_assert_eq!(y.len(), x.len());
        for i in cfg.n_fft..x.len() - cfg.n_fft {
            prop_assert!((x.samples[i] - y.samples[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in prop::collection::vec(-1.0f64..1.0, 256), b in prop::collection::vec(-1.0f64..1.0, 256)) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let unit = |v: &[f64]| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            SpeakerEmbedding::new(v.iter().map(|x| x / n).collect()).unwrap()
        };
        let (ea, eb) = (unit(&a), unit(&b));
        let c = speaker_cosine(&ea, &eb);
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, speaker_cosine(&eb, &ea));
    }
}
