use super::TrainConfig;

/// `lr0 / (1 + α·p)^β`.
pub fn lr_schedule(p: f64, cfg: &TrainConfig) -> f64 {
    cfg.lr0 / (1.0 + cfg.alpha * p).powf(cfg.beta)
}

/// `2 / (1 + exp(−δ·p)) − 1`, rising from 0 toward 1.
pub fn ramp(p: f64, delta: f64) -> f64 {
    2.0 / (1.0 + (-delta * p).exp()) - 1.0
}

/// `(λ, γ)`: the shared ramp scaled by each term's ceiling.
pub fn lambda_gamma_schedule(p: f64, cfg: &TrainConfig) -> (f64, f64) {
    let r = ramp(p, cfg.delta);
    (cfg.lambda_max * r, cfg.gamma_max * r)
}

/// Training progress over stage 2: completed iterations over total iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgressClock {
    completed: usize,
    total: usize,
}

impl ProgressClock {
    pub fn new(total: usize) -> Self {
        ProgressClock { completed: 0, total }
    }

    pub fn at(completed: usize, total: usize) -> Self {
        ProgressClock {
            completed: completed.min(total),
            total,
        }
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn p(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.completed as f64 / self.total as f64
        }
    }

    pub fn tick(&mut self) {
        self.completed = (self.completed + 1).min(self.total);
    }
}

/// Everything that depends on the iteration index alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedules {
    pub p: f64,
    pub lr: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Schedules {
    pub fn at(clock: ProgressClock, cfg: &TrainConfig) -> Self {
        let p = clock.p();
        let (lambda, gamma) = lambda_gamma_schedule(p, cfg);
        Schedules {
            p,
            lr: lr_schedule(p, cfg),
            lambda,
            gamma,
        }
    }
}
