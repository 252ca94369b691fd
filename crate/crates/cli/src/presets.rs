//! Named configurations carrying the published winning hyperparameters.

use crate::config::RunConfig;
use crate::error::{CliError, Result};

struct MlpRow {
    algo: &'static str,
    hidden: usize,
    lr: &'static str,
}

const MNIST_MLP: &[MlpRow] = &[
    MlpRow { algo: "adam", hidden: 100, lr: "0.0210" },
    MlpRow { algo: "adam", hidden: 500, lr: "0.0005" },
    MlpRow { algo: "sgd", hidden: 100, lr: "0.2030" },
    MlpRow { algo: "sgd", hidden: 500, lr: "0.1497" },
    MlpRow { algo: "am-adam", hidden: 100, lr: "0.1973" },
    MlpRow { algo: "am-adam", hidden: 500, lr: "0.1171" },
    MlpRow { algo: "am-mem", hidden: 100, lr: "0.1737" },
    MlpRow { algo: "am-mem", hidden: 500, lr: "0.1376" },
];

const CIFAR_MLP: &[MlpRow] = &[
    MlpRow { algo: "adam", hidden: 100, lr: "0.0029" },
    MlpRow { algo: "adam", hidden: 500, lr: "0.0002" },
    MlpRow { algo: "sgd", hidden: 100, lr: "0.1500" },
    MlpRow { algo: "sgd", hidden: 500, lr: "0.1428" },
    MlpRow { algo: "am-adam", hidden: 100, lr: "0.1974" },
    MlpRow { algo: "am-adam", hidden: 500, lr: "0.1011" },
    MlpRow { algo: "am-mem", hidden: 100, lr: "0.1746" },
    MlpRow { algo: "am-mem", hidden: 500, lr: "0.1016" },
];

const HIGGS: &[(&str, &str)] = &[("adam", "0.001"), ("sgd", "0.050"), ("am-adam", "0.001")];

/// `(d, algo, lr, mu_multiplier, mu_increment)`; the multiplier and
/// increment only apply to AM-Adam.
const RNN: &[(usize, &str, &str, &str, &str)] = &[
    (15, "adam", "0.005", "", ""),
    (15, "sgd", "0.05", "", ""),
    (15, "am-adam", "0.005", "1.1", "0.01"),
    (50, "adam", "0.005", "", ""),
    (50, "sgd", "0.005", "", ""),
    (50, "am-adam", "0.005", "1.0", "0.0001"),
];

fn am_defaults(algo: &str) -> &'static str {
    match algo {
        "am-adam" | "am-mem" => "mu = 0.01\nmu_max = 1.5\ncode_iters = 1\nweight_iters = 1\n",
        "sgd" => "sgd_decay = 0.9\n",
        _ => "",
    }
}

fn mlp_text(dataset: &str, row: &MlpRow, batch: usize, epochs: usize) -> String {
    format!(
        "{dataset}model = mlp\nactivation = relu\nhidden = {h}-{h}\nalgo = {a}\nlr = {lr}\nbatch_size = {batch}\nepochs = {epochs}\n{extra}",
        h = row.hidden,
        a = row.algo,
        lr = row.lr,
        extra = am_defaults(row.algo),
    )
}

fn lookup(name: &str) -> Option<String> {
    for row in MNIST_MLP {
        if name == format!("mnist-mlp-{}-{}", row.hidden, row.algo) {
            return Some(mlp_text("dataset = mnist\n", row, 200, 50));
        }
    }
    for row in CIFAR_MLP {
        if name == format!("cifar-mlp-{}-{}", row.hidden, row.algo) {
            return Some(mlp_text("dataset = csv\n", row, 200, 50));
        }
    }
    for (algo, lr) in HIGGS {
        if name == format!("higgs-{algo}") {
            let row = MlpRow { algo, hidden: 300, lr };
            return Some(mlp_text("dataset = csv\n", &row, 200, 1).replace("hidden = 300-300", "hidden = 300"));
        }
    }
    for (d, algo, lr, mult, inc) in RNN {
        if name == format!("rnn-{d}-{algo}") {
            let mut text = format!(
                "dataset = mnist\nmodel = rnn\nrnn_hidden = {d}\npool = 1\nalgo = {algo}\nlr = {lr}\nbatch_size = 1024\nepochs = 10\n"
            );
            match *algo {
                "am-adam" => text.push_str(&format!(
                    "mu = 0.01\nmu_max = 1\nmu_multiplier = {mult}\nmu_increment = {inc}\ncode_iters = 5\nweight_iters = 5\n"
                )),
                "sgd" => text.push_str("sgd_decay = 0.9\n"),
                _ => {}
            }
            return Some(text);
        }
    }
    None
}

pub fn preset_names() -> Vec<String> {
    let mut names = Vec::new();
    names.extend(MNIST_MLP.iter().map(|r| format!("mnist-mlp-{}-{}", r.hidden, r.algo)));
    names.extend(CIFAR_MLP.iter().map(|r| format!("cifar-mlp-{}-{}", r.hidden, r.algo)));
    names.extend(HIGGS.iter().map(|(a, _)| format!("higgs-{a}")));
    names.extend(RNN.iter().map(|(d, a, ..)| format!("rnn-{d}-{a}")));
    names
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let text = lookup(name).ok_or_else(|| {
        CliError::config(format!("unknown preset {name:?}; known presets: {}", preset_names().join(", ")))
    })?;
    RunConfig::parse(&text)
}

/// Replaces a `preset` entry by the preset's keys; explicit keys win.
pub fn expand(cfg: &RunConfig) -> Result<RunConfig> {
    let Some(name) = cfg.str("preset")? else {
        return Ok(cfg.clone());
    };
    let mut base = preset(name)?;
    let mut own = cfg.clone();
    own.remove("preset");
    base.overlay(&own);
    Ok(base)
}
