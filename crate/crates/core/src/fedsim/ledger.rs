/// Transfer counts and bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    /// Global model sent server -> client.
    pub model_down: u64,
    /// Local model sent client -> server.
    pub model_up: u64,
    /// Peer models sent to each client before a weight-learning session.
    pub peer_models: u64,
    pub beta_down: u64,
    pub beta_up: u64,
    pub model_bytes: u64,
    pub beta_bytes: u64,
}

impl Traffic {
    fn add(&mut self, o: &Traffic) {
        self.model_down += o.model_down;
        self.model_up += o.model_up;
        self.peer_models += o.peer_models;
        self.beta_down += o.beta_down;
        self.beta_up += o.beta_up;
        self.model_bytes += o.model_bytes;
        self.beta_bytes += o.beta_bytes;
    }
}

/// Per-round and cumulative communication accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLedger {
    rounds: Vec<Traffic>,
    total: Traffic,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a new round; later records land in it.
    pub fn begin_round(&mut self) {
        self.rounds.push(Traffic::default());
    }

    fn record(&mut self, t: Traffic) {
        if self.rounds.is_empty() {
            self.begin_round();
        }
        self.rounds.last_mut().unwrap().add(&t);
        self.total.add(&t);
    }

    pub fn broadcast_models(&mut self, count: u64, bytes_each: u64) {
        self.record(Traffic {
            model_down: count,
            model_bytes: count * bytes_each,
            ..Traffic::default()
        });
    }

    pub fn upload_models(&mut self, count: u64, bytes_each: u64) {
        self.record(Traffic {
            model_up: count,
            model_bytes: count * bytes_each,
            ..Traffic::default()
        });
    }

    pub fn send_peer_models(&mut self, count: u64, bytes_each: u64) {
        self.record(Traffic {
            peer_models: count,
            model_bytes: count * bytes_each,
            ..Traffic::default()
        });
    }

    pub fn exchange_beta(&mut self, down: u64, up: u64, bytes_each: u64) {
        self.record(Traffic {
            beta_down: down,
            beta_up: up,
            beta_bytes: (down + up) * bytes_each,
            ..Traffic::default()
        });
    }

    pub fn rounds(&self) -> &[Traffic] {
        &self.rounds
    }

    pub fn total(&self) -> &Traffic {
        &self.total
    }

    /// Cumulative totals after each round.
    pub fn cumulative(&self) -> Vec<Traffic> {
        let mut acc = Traffic::default();
        self.rounds
            .iter()
            .map(|r| {
                acc.add(r);
                acc
            })
            .collect()
    }
}

/// Extra model-sized transfers divided by the FedAvg ones: `(K - 1) / (2 t0)`.
pub fn extra_comm_ratio(clients: usize, interval: usize) -> f64 {
    clients.saturating_sub(1) as f64 / (2.0 * interval as f64)
}

/// The same ratio measured from a ledger's counts (0 when nothing was sent).
pub fn ledger_ratio(ledger: &CommLedger) -> f64 {
    let t = ledger.total();
    let base = t.model_down + t.model_up;
    if base == 0 {
        0.0
    } else {
        t.peer_models as f64 / base as f64
    }
}

/// Share of Concentration bytes relative to model bytes.
pub fn beta_byte_fraction(ledger: &CommLedger) -> f64 {
    let t = ledger.total();
    if t.model_bytes == 0 {
        0.0
    } else {
        t.beta_bytes as f64 / t.model_bytes as f64
    }
}
