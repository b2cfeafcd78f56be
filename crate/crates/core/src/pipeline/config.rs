use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::HypergradMode;
use crate::data::GenSpec;
use crate::error::{Error, Result};
use crate::losses::{Stage1Weights, Stage3Weights};
use crate::meta::{MetaConfig, SIGMA_FLOOR};
use crate::metrics::F1Mode;
use crate::nn::AdamWConfig;
use crate::textio::read_to_string;

/// Every knob of a run. Read from flat `key = value` files with `#` comments.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub batch_size: usize,
    /// Stage 1 and stage 3 learning rate.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub meta_epochs: usize,
    /// Upper bound on stage-3 epochs; early stopping usually ends sooner.
    pub stage3_max_epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub meta_lr: f64,
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
    pub tau: f64,
    /// Width of the fused representation.
    pub d: usize,
    pub d_a: usize,
    pub d_v: usize,
    pub d_l: usize,
    pub lambda_init: f64,
    pub sigma: f64,
    pub b: usize,
    pub k_inner: usize,
    pub rho: f64,
    pub seed: u64,
    pub hypergrad: HypergradMode,
    pub f1_mode: F1Mode,
    pub data: GenSpec,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            pretrain_epochs: 15,
            meta_epochs: 65,
            stage3_max_epochs: 60,
            patience: 8,
            alpha: 5e-3,
            meta_lr: 1e-3,
            gamma: 0.01,
            eta: 0.01,
            beta: 0.01,
            tau: 1.0,
            d: 32,
            d_a: 256,
            d_v: 64,
            d_l: 64,
            lambda_init: 0.5,
            sigma: 1.0,
            b: 10,
            k_inner: 1,
            rho: 3.0,
            seed: 1111,
            hypergrad: HypergradMode::SecondOrder,
            f1_mode: F1Mode::Weighted,
            data: GenSpec::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Parse {
        line,
        msg: format!("bad value `{value}` for `{key}`: {e}"),
    })
}

fn parse_mode(value: &str, line: usize) -> Result<HypergradMode> {
    match value {
        "second_order" => Ok(HypergradMode::SecondOrder),
        "first_order" => Ok(HypergradMode::FirstOrder),
        _ => Err(Error::Parse {
            line,
            msg: format!("hypergrad must be `second_order` or `first_order`, got `{value}`"),
        }),
    }
}

fn parse_f1(value: &str, line: usize) -> Result<F1Mode> {
    match value {
        "weighted" => Ok(F1Mode::Weighted),
        "binary_positive" => Ok(F1Mode::BinaryPositive),
        _ => Err(Error::Parse {
            line,
            msg: format!("f1_mode must be `weighted` or `binary_positive`, got `{value}`"),
        }),
    }
}

impl Config {
    pub fn from_text(text: &str) -> Result<Config> {
        let mut c = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            c.set(key.trim(), value.trim(), line)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config> {
        Config::from_text(&read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse_value(key, v, line)?,
            "learning_rate" => self.learning_rate = parse_value(key, v, line)?,
            "weight_decay" => self.weight_decay = parse_value(key, v, line)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_value(key, v, line)?,
            "meta_epochs" => self.meta_epochs = parse_value(key, v, line)?,
            "stage3_max_epochs" => self.stage3_max_epochs = parse_value(key, v, line)?,
            "patience" => self.patience = parse_value(key, v, line)?,
            "alpha" => self.alpha = parse_value(key, v, line)?,
            "meta_lr" => self.meta_lr = parse_value(key, v, line)?,
            "gamma" => self.gamma = parse_value(key, v, line)?,
            "eta" => self.eta = parse_value(key, v, line)?,
            "beta" => self.beta = parse_value(key, v, line)?,
            "tau" => self.tau = parse_value(key, v, line)?,
            "d" => self.d = parse_value(key, v, line)?,
            "d_a" => self.d_a = parse_value(key, v, line)?,
            "d_v" => self.d_v = parse_value(key, v, line)?,
            "d_l" => self.d_l = parse_value(key, v, line)?,
            "lambda_init" => self.lambda_init = parse_value(key, v, line)?,
            "sigma" => self.sigma = parse_value(key, v, line)?,
            "b" => self.b = parse_value(key, v, line)?,
            "k_inner" => self.k_inner = parse_value(key, v, line)?,
            "rho" => {
                self.rho = parse_value(key, v, line)?;
                self.data.rho = self.rho;
            }
            "seed" => self.set_seed(parse_value(key, v, line)?),
            "hypergrad" => self.hypergrad = parse_mode(v, line)?,
            "f1_mode" => self.f1_mode = parse_f1(v, line)?,
            "n_train" => self.data.n_train = parse_value(key, v, line)?,
            "n_val" => self.data.n_val = parse_value(key, v, line)?,
            "n_test" => self.data.n_test = parse_value(key, v, line)?,
            "feature_dim_a" => self.data.feature_dims[0] = parse_value(key, v, line)?,
            "feature_dim_v" => self.data.feature_dims[1] = parse_value(key, v, line)?,
            "feature_dim_l" => self.data.feature_dims[2] = parse_value(key, v, line)?,
            "sigma_inc" => self.data.sigma_inc = parse_value(key, v, line)?,
            "weight_a" => self.data.weights[0] = parse_value(key, v, line)?,
            "weight_v" => self.data.weights[1] = parse_value(key, v, line)?,
            "weight_l" => self.data.weights[2] = parse_value(key, v, line)?,
            "sigma_y" => self.data.sigma_y = parse_value(key, v, line)?,
            "sigma_x" => self.data.sigma_x = parse_value(key, v, line)?,
            "distractor_dims" => self.data.distractor_dims = parse_value(key, v, line)?,
            _ => {
                return Err(Error::UnknownField {
                    line,
                    field: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// One seed drives data generation and every training stream.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("pretrain_epochs", self.pretrain_epochs),
            ("stage3_max_epochs", self.stage3_max_epochs),
            ("patience", self.patience),
            ("d", self.d),
            ("d_a", self.d_a),
            ("d_v", self.d_v),
            ("d_l", self.d_l),
            ("b", self.b),
            ("k_inner", self.k_inner),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("alpha", self.alpha),
            ("meta_lr", self.meta_lr),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.sigma.is_nan() || self.sigma < SIGMA_FLOOR {
            return bad(format!("sigma must be >= {SIGMA_FLOOR}, got {}", self.sigma));
        }
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return bad(format!("lambda_init must lie in (0, 1), got {}", self.lambda_init));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        self.data.validate()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.hypergrad {
            HypergradMode::SecondOrder => "second_order",
            HypergradMode::FirstOrder => "first_order",
        };
        let f1 = match self.f1_mode {
            F1Mode::Weighted => "weighted",
            F1Mode::BinaryPositive => "binary_positive",
        };
        let g = &self.data;
        let pairs: Vec<(&str, String)> = vec![
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("meta_epochs", self.meta_epochs.to_string()),
            ("stage3_max_epochs", self.stage3_max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("alpha", self.alpha.to_string()),
            ("meta_lr", self.meta_lr.to_string()),
            ("gamma", self.gamma.to_string()),
            ("eta", self.eta.to_string()),
            ("beta", self.beta.to_string()),
            ("tau", self.tau.to_string()),
            ("d", self.d.to_string()),
            ("d_a", self.d_a.to_string()),
            ("d_v", self.d_v.to_string()),
            ("d_l", self.d_l.to_string()),
            ("lambda_init", self.lambda_init.to_string()),
            ("sigma", self.sigma.to_string()),
            ("b", self.b.to_string()),
            ("k_inner", self.k_inner.to_string()),
            ("rho", self.rho.to_string()),
            ("seed", self.seed.to_string()),
            ("hypergrad", mode.to_string()),
            ("f1_mode", f1.to_string()),
            ("n_train", g.n_train.to_string()),
            ("n_val", g.n_val.to_string()),
            ("n_test", g.n_test.to_string()),
            ("feature_dim_a", g.feature_dims[0].to_string()),
            ("feature_dim_v", g.feature_dims[1].to_string()),
            ("feature_dim_l", g.feature_dims[2].to_string()),
            ("sigma_inc", g.sigma_inc.to_string()),
            ("weight_a", g.weights[0].to_string()),
            ("weight_v", g.weights[1].to_string()),
            ("weight_l", g.weights[2].to_string()),
            ("sigma_y", g.sigma_y.to_string()),
            ("sigma_x", g.sigma_x.to_string()),
            ("distractor_dims", g.distractor_dims.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn stage1_weights(&self) -> Stage1Weights {
        Stage1Weights {
            eta: self.eta,
            gamma: self.gamma,
            tau: self.tau,
        }
    }

    pub fn stage3_weights(&self) -> Stage3Weights {
        Stage3Weights { beta: self.beta }
    }

    pub fn meta(&self) -> MetaConfig {
        MetaConfig {
            epochs: self.meta_epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            meta_lr: self.meta_lr,
            sigma: self.sigma,
            lambda_init: self.lambda_init,
            oversample: self.b,
            inner_steps: self.k_inner,
            rho: self.rho,
            mode: self.hypergrad,
            seed: self.seed,
        }
    }

    pub fn unimodal_dims(&self) -> [usize; 3] {
        [self.d_a, self.d_v, self.d_l]
    }
}
