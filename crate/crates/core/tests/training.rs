mod common;

use common::{model, rng};
use diffcore::Tensor;
use facefill::pipeline::data::{generate_dataset, DataConfig};
use facefill::pipeline::models::{InpainterConfig, Model3dmmConfig};
use facefill::pipeline::train::{
    discriminator_loss, train_3dmm, train_inpainter, window_means, write_log_line, FactorSource, StepLog, Train3dmmConfig,
    TrainInpainterConfig,
};
use facefill::pipeline::{factorize, Analyzer, Inpainter, OracleAnalyzer, Trained3dmm, TrainedInpainter};
use facefill::store::Image;
use facefill::FaceError;
use rand::Rng;

fn data(n: usize) -> Vec<facefill::pipeline::SyntheticFace> {
    generate_dataset(model(), &DataConfig::default(), n, 17).unwrap()
}

fn snapshot(vs: &diffcore::nn::VarStore<f32>) -> Vec<Vec<f32>> {
    vs.trainable().iter().map(|p| p.get().to_vec()).collect()
}

fn keep_going() -> impl FnMut(&StepLog) -> bool {
    |_| true
}

#[test]
fn zero_learning_rate_leaves_3dmm_parameters_unchanged() {
    let m = model();
    let d = data(4);
    let init = Trained3dmm::new(Model3dmmConfig::desk(m), 5).unwrap();
    let before = snapshot(&init.vs);
    let cfg = Train3dmmConfig { steps: 2, stage1_steps: 1, batch: 2, lr: 0.0, ..Default::default() };
    let (net, report) = train_3dmm(m, &d, &cfg, Some(init), &mut keep_going()).unwrap();
    assert_eq!(report.logs.len(), 2);
    assert_eq!(report.logs[1].stage, 2);
    assert_eq!(snapshot(&net.vs), before);
}

#[test]
fn zero_learning_rate_leaves_inpainter_parameters_unchanged() {
    let m = model();
    let d = data(3);
    let init = TrainedInpainter::new(InpainterConfig::default(), 2);
    let (g, dsc) = (snapshot(&init.vs_g), snapshot(&init.vs_d));
    let cfg = TrainInpainterConfig { steps: 2, batch: 2, lr_g: 0.0, lr_d: 0.0, ..Default::default() };
    let (net, _) = train_inpainter(m, &d, FactorSource::Oracle, &cfg, Some(init), &mut keep_going()).unwrap();
    assert_eq!(snapshot(&net.vs_g), g);
    assert_eq!(snapshot(&net.vs_d), dsc);
}

#[test]
fn fixed_seed_gives_identical_losses() {
    let m = model();
    let d = data(4);
    let cfg = Train3dmmConfig { steps: 3, batch: 2, seed: 9, ..Default::default() };
    let (_, a) = train_3dmm(m, &d, &cfg, None, &mut keep_going()).unwrap();
    let (_, b) = train_3dmm(m, &d, &cfg, None, &mut keep_going()).unwrap();
    assert_eq!(a, b);
    let icfg = TrainInpainterConfig { steps: 2, batch: 2, seed: 4, ..Default::default() };
    let (_, a) = train_inpainter(m, &d, FactorSource::Oracle, &icfg, None, &mut keep_going()).unwrap();
    let (_, b) = train_inpainter(m, &d, FactorSource::Oracle, &icfg, None, &mut keep_going()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn generator_and_discriminator_alternate_one_to_one() {
    let m = model();
    let d = data(3);
    let cfg = TrainInpainterConfig { steps: 3, batch: 1, ..Default::default() };
    let (_, r) = train_inpainter(m, &d, FactorSource::Oracle, &cfg, None, &mut keep_going()).unwrap();
    assert_eq!((r.g_steps, r.d_steps), (3, 3));
    assert!(r.logs.iter().all(|l| l.terms.contains_key("discriminator") && l.terms.contains_key("adversarial")));
    let cfg = TrainInpainterConfig { gan: false, ..cfg };
    let (_, r) = train_inpainter(m, &d, FactorSource::Oracle, &cfg, None, &mut keep_going()).unwrap();
    assert_eq!((r.g_steps, r.d_steps), (3, 0));
}

#[test]
fn discriminator_step_does_not_reach_the_generator() {
    let net = TrainedInpainter::new(InpainterConfig::default(), 1);
    let mut r = rng(3);
    let img = |r: &mut rand_chacha::ChaCha8Rng| {
        let v: Vec<f64> = (0..2 * 3 * 112 * 112).map(|_| r.gen_range(-1.0..1.0)).collect();
        Tensor::<f32>::from_f64(&v, &[2, 3, 112, 112]).unwrap()
    };
    let real = img(&mut r);
    let gen_param = Tensor::<f32>::from_f64(&vec![0.7; 2 * 3 * 112 * 112], &[2, 3, 112, 112]).unwrap().requires_grad_(true);
    let fake = img(&mut r).mul(&gen_param).unwrap();
    let (loss, _) = discriminator_loss(&net.d, &real, &fake, &[0.3, 0.6], 1.0).unwrap();
    let grads = loss.backward().unwrap();
    assert!(grads.get(&gen_param).is_none());
    assert!(net.vs_d.trainable().iter().any(|p| grads.get(&p.get()).is_some()));
    assert!(net.vs_g.trainable().iter().all(|p| grads.get(&p.get()).is_none()));
}

#[test]
fn early_stop_callback_ends_training() {
    let m = model();
    let d = data(2);
    let cfg = Train3dmmConfig { steps: 10, batch: 1, ..Default::default() };
    let mut seen = 0;
    let mut stop = |_: &StepLog| {
        seen += 1;
        seen < 2
    };
    let (_, r) = train_3dmm(m, &d, &cfg, None, &mut stop).unwrap();
    assert_eq!(r.logs.len(), 2);
}

#[test]
fn bad_training_inputs_are_rejected() {
    let m = model();
    let cfg = Train3dmmConfig { steps: 1, ..Default::default() };
    assert!(matches!(train_3dmm(m, &[], &cfg, None, &mut keep_going()), Err(FaceError::Invalid(_))));
    let cfg = TrainInpainterConfig { batch: 0, ..Default::default() };
    assert!(train_inpainter(m, &data(1), FactorSource::Oracle, &cfg, None, &mut keep_going()).is_err());
}

#[test]
fn checkpoints_round_trip() {
    let m = model();
    let d = data(1);
    let dir = tempfile::tempdir().unwrap();
    let enc = Trained3dmm::new(Model3dmmConfig::desk(m), 12).unwrap();
    let p = dir.path().join("enc.ffc");
    enc.save(&p).unwrap();
    let back = Trained3dmm::load(&p).unwrap();
    let zero = Image::new(1, 112, 112);
    assert_eq!(enc.analyze(m, &d[0].image, &zero).unwrap(), back.analyze(m, &d[0].image, &zero).unwrap());

    let inp = TrainedInpainter::new(InpainterConfig { width_div: 8, symmetric: false, disc_width_div: 8 }, 13);
    let p = dir.path().join("inp.ffc");
    inp.save(&p).unwrap();
    let back = TrainedInpainter::load(&p).unwrap();
    assert_eq!(back.cfg, inp.cfg);
    let fz = factorize(m, &d[0].image, &zero, &OracleAnalyzer(d[0].factors.clone())).unwrap();
    let a = inp.inpaint(&fz.partial_albedo, &fz.uv_mask).unwrap();
    let b = back.inpaint(&fz.partial_albedo, &fz.uv_mask).unwrap();
    assert_eq!(a.data, b.data);
    assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(Trained3dmm::load(&p).is_err(), "inpainter checkpoint must not load as an encoder");
}

#[test]
fn window_means_and_log_lines() {
    assert_eq!(window_means(&[1.0, 3.0, 5.0, 7.0, 9.0], 2), vec![2.0, 6.0]);
    let mut buf = Vec::new();
    let entry = StepLog { step: 3, stage: 1, lr: 1e-4, total: 0.5, terms: [("rec".to_string(), 0.25)].into() };
    write_log_line(&mut buf, &entry).unwrap();
    let line = String::from_utf8(buf).unwrap();
    assert!(line.ends_with('\n'));
    let back: StepLog = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(back, entry);
}
