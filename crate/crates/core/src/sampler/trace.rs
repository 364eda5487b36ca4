use crate::data::ClusterState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Birth,
    Death,
    Shift,
    Sigma,
    Xi,
    Chi,
    Hyper,
}

impl MoveKind {
    pub const ALL: [MoveKind; 7] =
        [MoveKind::Birth, MoveKind::Death, MoveKind::Shift, MoveKind::Sigma, MoveKind::Xi, MoveKind::Chi, MoveKind::Hyper];

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::Shift => "shift",
            MoveKind::Sigma => "sigma",
            MoveKind::Xi => "xi",
            MoveKind::Chi => "chi",
            MoveKind::Hyper => "hyper",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Proposal and acceptance counts per move. Parameter moves count each
/// component update separately.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub proposed: [u64; 7],
    pub accepted: [u64; 7],
}

impl MoveStats {
    pub(crate) fn record(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        self.accepted[kind.index()] += accepted as u64;
    }

    pub fn rate(&self, kind: MoveKind) -> f64 {
        let p = self.proposed[kind.index()];
        if p == 0 {
            f64::NAN
        } else {
            self.accepted[kind.index()] as f64 / p as f64
        }
    }
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub iter: u64,
    pub state: ClusterState,
    pub log_posterior: f64,
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub samples: Vec<Sample>,
    pub stats: MoveStats,
    pub n_sites: usize,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_clusters(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.state.n_clusters()).collect()
    }

    /// Posterior frequencies of `J`, for `J = 1..=max` observed.
    pub fn posterior_j(&self) -> Vec<(usize, f64)> {
        let js = self.n_clusters();
        let max = js.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0usize; max + 1];
        for j in js {
            counts[j] += 1;
        }
        let n = self.len() as f64;
        (1..=max).map(|j| (j, counts[j] as f64 / n)).collect()
    }

    /// Concatenate traces from several chains.
    pub fn merge(traces: impl IntoIterator<Item = Trace>) -> Trace {
        let mut out = Trace::default();
        for t in traces {
            out.n_sites = t.n_sites;
            for i in 0..7 {
                out.stats.proposed[i] += t.stats.proposed[i];
                out.stats.accepted[i] += t.stats.accepted[i];
            }
            out.samples.extend(t.samples);
        }
        out
    }
}
