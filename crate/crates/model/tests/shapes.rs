//! Architecture invariants: shapes, length preservation, tap
//! equivalences, determinism, causal masking, and shift-invariant
//! relative attention.

use indexmap::IndexMap;
use vsr_core::grad::Session;
use vsr_core::rng::RngStream;
use vsr_core::store::ParameterStore;
use vsr_core::tensor::Tensor;
use vsr_model::conformer::{encode, rel_attention_scores, tap_names};
use vsr_model::decoder::decode_logits;
use vsr_model::heads::mstcn_classify;
use vsr_model::spatial::spatial_encode;
use vsr_model::{init_params, ModelConfig, ModelError, Parts};

fn random_clip(t: usize, hw: usize, seed: u64) -> Tensor<f32> {
    let mut rng = RngStream::new(seed);
    let data: Vec<f32> = (0..t * hw * hw).map(|_| rng.uniform01() as f32).collect();
    Tensor::new(vec![t, hw, hw], data).unwrap()
}

fn desk_store(seed: u64) -> (ModelConfig, ParameterStore) {
    let cfg = ModelConfig::desk();
    let params = init_params(&cfg, Parts::sentence(), cfg.d_model, seed).unwrap();
    (cfg, params)
}

#[test]
fn all_presets_validate() {
    ModelConfig::desk().validate().unwrap();
    ModelConfig::mini().validate().unwrap();
    ModelConfig::paper_scale().validate().unwrap();
}

#[test]
fn desk_spatial_geometry() {
    let g = ModelConfig::desk().spatial_geometry().unwrap();
    // 28 -> front conv stride 2 pad 3 kernel 7 -> 14 -> pool -> 7,
    // then stride-1 and stride-2 residual stages: 7, 4.
    assert_eq!(g.front, 14);
    assert_eq!(g.pooled, 7);
    assert_eq!(g.stages, vec![7, 4]);
}

#[test]
fn encoder_preserves_temporal_length() {
    let (cfg, params) = desk_store(11);
    for t in [1usize, 7, 25, 29] {
        let clip = random_clip(t, cfg.input_hw, t as u64);
        let s: Session<f32> = Session::new(&params, false, None);
        let x = s.input(clip);
        let mut taps = IndexMap::new();
        let out = encode(&s, &cfg, x, &mut taps).unwrap();
        assert_eq!(s.tape.shape(out), vec![t, cfg.d_model], "T={t}");
    }
}

#[test]
fn tap_shapes_and_equivalences() {
    let (cfg, params) = desk_store(3);
    let clip = random_clip(9, cfg.input_hw, 42);
    let s: Session<f32> = Session::new(&params, false, None);
    let x = s.input(clip);
    let mut taps = IndexMap::new();
    let out = encode(&s, &cfg, x, &mut taps).unwrap();
    let names: Vec<&str> = taps.keys().map(|k| k.as_str()).collect();
    assert_eq!(names, vec!["res-b3", "res-b4", "ce-b1", "ce-b2"]);
    assert_eq!(tap_names(&cfg), vec!["res-b3", "res-b4", "ce-b1", "ce-b2"]);
    // res-b3 is the pooled second-to-last residual stage.
    assert_eq!(s.tape.shape(taps["res-b3"]), vec![9, cfg.res_stages[0].0]);
    assert_eq!(s.tape.shape(taps["res-b4"]), vec![9, cfg.d_model]);
    // The last conformer tap is bit-identical to the encoder output.
    assert_eq!(
        s.tape.value(taps["ce-b2"]).data(),
        s.tape.value(out).data()
    );
    // res-b4 is bit-identical to the spatial encoder output.
    let s2: Session<f32> = Session::new(&params, false, None);
    let x2 = s2.input(random_clip(9, cfg.input_hw, 42));
    let mut taps2 = IndexMap::new();
    let spat = spatial_encode(&s2, &cfg, x2, &mut taps2).unwrap();
    assert_eq!(
        s2.tape.value(spat).data(),
        s.tape.value(taps["res-b4"]).data()
    );
}

#[test]
fn eval_is_deterministic() {
    let (cfg, params) = desk_store(5);
    let clip = random_clip(6, cfg.input_hw, 7);
    let run = || {
        let s: Session<f32> = Session::new(&params, false, None);
        let x = s.input(clip.clone());
        let mut taps = IndexMap::new();
        let out = encode(&s, &cfg, x, &mut taps).unwrap();
        s.tape.value(out).data().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn wrong_spatial_size_rejected() {
    let (cfg, params) = desk_store(1);
    let clip = random_clip(3, 27, 0);
    let s: Session<f32> = Session::new(&params, false, None);
    let x = s.input(clip);
    let mut taps = IndexMap::new();
    let err = spatial_encode(&s, &cfg, x, &mut taps).unwrap_err();
    assert!(matches!(err, ModelError::SpatialTooSmall { got: 27, need: 28 }));
}

#[test]
fn mstcn_rejects_short_sequences() {
    let cfg = ModelConfig::desk();
    let params = init_params(&cfg, Parts::word(), cfg.d_model, 0).unwrap();
    let s: Session<f32> = Session::new(&params, false, None);
    let x = s.input(Tensor::full(vec![5, cfg.d_model], 0.1f32));
    let err = mstcn_classify(&s, &cfg, x).unwrap_err();
    assert!(matches!(err, ModelError::SequenceTooShort { got: 5, need: 7 }));
    // Exactly the max kernel width is fine.
    let s2: Session<f32> = Session::new(&params, false, None);
    let x2 = s2.input(Tensor::full(vec![7, cfg.d_model], 0.1f32));
    let out = mstcn_classify(&s2, &cfg, x2).unwrap();
    assert_eq!(s2.tape.shape(out), vec![1, cfg.word_classes]);
}

#[test]
fn decoder_is_causal_bit_level() {
    let (cfg, params) = desk_store(17);
    let enc = {
        let mut rng = RngStream::new(9);
        let data: Vec<f32> = (0..6 * cfg.d_model).map(|_| rng.normal01() as f32).collect();
        Tensor::new(vec![6, cfg.d_model], data).unwrap()
    };
    // Two prefixes agreeing on the first three positions.
    let p1 = vec![cfg.sos(), 0, 1, 2, 3];
    let p2 = vec![cfg.sos(), 0, 1, 5, 0];
    let logits = |prefix: &[usize]| {
        let s: Session<f32> = Session::new(&params, false, None);
        let e = s.input(enc.clone());
        let l = decode_logits(&s, &cfg, e, prefix).unwrap();
        s.tape.value(l)
    };
    let (l1, l2) = (logits(&p1), logits(&p2));
    let c = cfg.dec_out();
    // Rows 0..3 depend only on the shared part: bitwise equal.
    assert_eq!(&l1.data()[..3 * c], &l2.data()[..3 * c]);
    // Row 3 sees the differing token and must change.
    assert_ne!(&l1.data()[3 * c..4 * c], &l2.data()[3 * c..4 * c]);
}

#[test]
fn decoder_rejects_bad_prefixes() {
    let (cfg, params) = desk_store(2);
    let enc = Tensor::full(vec![4, cfg.d_model], 0.1f32);
    let s: Session<f32> = Session::new(&params, false, None);
    let e = s.input(enc.clone());
    assert!(decode_logits(&s, &cfg, e, &[0, 1]).is_err()); // no sos
    let s2: Session<f32> = Session::new(&params, false, None);
    let e2 = s2.input(enc);
    let err = decode_logits(&s2, &cfg, e2, &[cfg.sos(), cfg.embed_vocab()]).unwrap_err();
    assert!(matches!(err, ModelError::UnknownToken(_, _)));
}

#[test]
fn relative_attention_is_shift_invariant() {
    let (cfg, params) = desk_store(23);
    let t = 12;
    let payload = 4;
    // The same payload embedded at two offsets inside zero padding.
    let mut rng = RngStream::new(31);
    let pay: Vec<f32> = (0..payload * cfg.d_model).map(|_| rng.normal01() as f32).collect();
    let build = |offset: usize| {
        let mut x = Tensor::<f32>::zeros(vec![t, cfg.d_model]);
        x.data_mut()[offset * cfg.d_model..(offset + payload) * cfg.d_model]
            .copy_from_slice(&pay);
        x
    };
    let scores = |x: Tensor<f32>| {
        let s: Session<f32> = Session::new(&params, false, None);
        let xv = s.input(x);
        let sc = rel_attention_scores(&s, &cfg, "encoder/conf/b1/attn", xv).unwrap();
        sc.into_iter().map(|v| s.tape.value(v)).collect::<Vec<_>>()
    };
    let (o1, o2) = (2usize, 5usize);
    let (s1, s2) = (scores(build(o1)), scores(build(o2)));
    for h in 0..cfg.n_head {
        for a in 0..payload {
            for b in 0..payload {
                let v1 = s1[h].data()[(o1 + a) * t + (o1 + b)];
                let v2 = s2[h].data()[(o2 + a) * t + (o2 + b)];
                assert_eq!(v1, v2, "head {h} payload ({a},{b})");
            }
        }
    }
}

#[test]
fn param_report_covers_all_parts() {
    let cfg = ModelConfig::desk();
    let report = vsr_model::param_count_report(&cfg, Parts::sentence(), cfg.d_model);
    assert!(report.contains_key("encoder/front"));
    assert!(report.contains_key("decoder/b1"));
    let total = report["total"];
    let store = init_params(&cfg, Parts::sentence(), cfg.d_model, 0).unwrap();
    assert_eq!(total, store.total_elements());
    // Paper-scale counts are in the millions, dominated by the decoder
    // and conformer stacks.
    let paper = ModelConfig::paper_scale();
    let ptotal = vsr_model::param_count_report(&paper, Parts::sentence(), paper.d_model)["total"];
    assert!(ptotal > 10_000_000, "paper-scale total {ptotal}");
}

#[test]
fn init_is_seed_deterministic() {
    let cfg = ModelConfig::desk();
    let a = init_params(&cfg, Parts::pretext(), cfg.d_model, 123).unwrap();
    let b = init_params(&cfg, Parts::pretext(), cfg.d_model, 123).unwrap();
    let c = init_params(&cfg, Parts::pretext(), cfg.d_model, 124).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), c.content_hash());
}
