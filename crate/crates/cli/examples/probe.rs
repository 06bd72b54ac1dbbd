//! Temporary numeric probe of the guidance fields for the benchmark
//! configs. Prints the conditional, fine-tuned-unconditional and
//! pretrained-unconditional epsilon predictions at controlled points so
//! the guidance decomposition can be read off directly. Not a
//! deliverable; delete with scan.rs.

use finextract_cli::config::ExperimentConfig;
use finextract_cli::pipeline::{ensure_finetuned, ensure_pretrained};
use finextract_core::denoiser::Denoiser;

const FRAC: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ft_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let ft_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.005);

    let r = 2.2;
    let base0 = [r * FRAC, r * FRAC, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let a = 105f64.to_radians();
    let tgt0 = [r * a.cos(), r * a.sin(), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];

    let toml = format!(
        r#"
seed = 0
similarity = "rbf"

[base]
weights = [0.25, 0.25, 0.25, 0.25]
means = [[1.556, 1.556, 0, 0, 0, 0, 0, 0], [0, 0, 1.556, 1.556, 0, 0, 0, 0], [0, 0, 0, 0, 1.556, 1.556, 0, 0], [0, 0, 0, 0, 0, 0, 1.556, 1.556]]
variance = 0.05
train_points = 2000

[arch]
x_dim = 8
hidden = 64
time_freqs = 4
time_scale = 400

[arch.vocab]
size = 16
emb_dim = 8
seed = 5

[schedule]
steps = 400
beta_start = 1e-3
beta_end = 0.025

[targets]
points = [[{tx}, {ty}, 0, 0, 0, 0, 0, 0], [0, 0, {tx}, {ty}, 0, 0, 0, 0], [0, 0, 0, 0, {tx}, {ty}, 0, 0], [0, 0, 0, 0, 0, 0, {tx}, {ty}]]
caption = [3]

[pretrain]
steps = 12000
lr = 2e-3
optimizer = "adam"
batch_size = 64
seed = 11

[finetune]
method = "full"
steps = {ft_steps}
lr = {ft_lr}
optimizer = "sgd"
batch_size = 32
seed = 13
"#,
        tx = tgt0[0],
        ty = tgt0[1],
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, &toml).unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let cache = dir.path().join("ckpt");
    let (pre, pre_path, _) = ensure_pretrained(&cfg, &cache).unwrap();
    let (ft, _, _) = ensure_finetuned(&cfg, &pre, &pre_path, &cache).unwrap();
    let cap = [3usize];

    let origin = [0.0; 8];
    let mid: Vec<f64> = base0.iter().zip(&tgt0).map(|(b, t)| (b + t) / 2.0).collect();
    let outside: Vec<f64> = tgt0.iter().map(|v| v * 2.0).collect();
    let spots: [(&str, &[f64]); 5] = [
        ("base0", &base0),
        ("target0", &tgt0),
        ("midpoint", &mid),
        ("origin", &origin),
        ("2x target", &outside),
    ];
    println!("ft_steps={ft_steps} ft_lr={ft_lr}");
    for t in [20usize, 150, 390] {
        println!("t = {t}");
        for (name, x) in spots {
            let c = ft.predict_eps(x, t, Some(&cap)).unwrap();
            let uf = ft.predict_eps(x, t, None).unwrap();
            let up = pre.predict_eps(x, t, None).unwrap();
            let cond_sig = sub(&c, &uf);
            let drift = sub(&uf, &up);
            println!(
                "  {name:<10} |c| {:6.3} |u_ft| {:6.3} |u_pre| {:6.3}  |c-u_ft| {:6.3}  |u_ft-u_pre| {:6.3}",
                norm(&c),
                norm(&uf),
                norm(&up),
                norm(&cond_sig),
                norm(&drift),
            );
        }
    }
}
