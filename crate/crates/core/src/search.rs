//! Probabilistic adaptive search over the face space.
//!
//! The state keeps the set of faces an oracle judged similar to the target,
//! stored as standardized coordinates `z = (c - mu_c) / sd`. Each iteration
//! picks an accepted face uniformly, perturbs it with an isotropic Gaussian
//! kernel to get the skew target `mu_tilde`, generates a batch of
//! skew-normal candidates, and lets the oracle accept some of them.
//!
//! The loop is split into [`SearchState::propose`] and
//! [`SearchState::commit`] so a human can sit between the two; a
//! [`SimulatedOracle`] drives [`iterate`] and [`run`] synchronously.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::eigenspace::{Coordinates, EigenModel};
use crate::error::{Error, Result};
use crate::faceio::{FaceDataset, FaceVector};
use crate::gaussmodel::MvnModel;
use crate::rng::{self, StreamRng};
use crate::skewnormal::{generate_faces, SkewTarget, DEFAULT_ZETA};

/// Tunable knobs of a search session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Kernel bandwidth `h` in standardized units.
    pub bandwidth: f64,
    /// Local acceptance level: a candidate is accepted when its loss is
    /// below this.
    pub epsilon: f64,
    /// Global level: the search stops once an accepted face beats this.
    pub epsilon_star: f64,
    pub zeta: f64,
    /// Candidates generated per iteration.
    pub per_iter: usize,
    /// Size of the initial pool drawn from the dataset.
    pub initial_pool: usize,
    pub max_iters: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            bandwidth: 0.3,
            epsilon: 1.0,
            epsilon_star: 0.25,
            zeta: DEFAULT_ZETA,
            per_iter: 9,
            initial_pool: 30,
            max_iters: 50,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.bandwidth >= 0.0 && self.bandwidth.is_finite()) {
            return bad("bandwidth must be finite and nonnegative");
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return bad("zeta must lie in (0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon_star.is_nan() {
            return bad("acceptance levels must not be NaN");
        }
        if self.per_iter == 0 || self.initial_pool == 0 {
            return bad("per_iter and initial_pool must be positive");
        }
        Ok(())
    }
}

/// Anything that scores a candidate against the (hidden) target.
pub trait Oracle {
    /// Nonnegative dissimilarity; lower is closer.
    fn loss(&self, candidate: &Coordinates) -> f64;
}

/// `|(a - b) / sd|_2 / sqrt(K)`.
pub fn simulated_loss(
    target: &Coordinates,
    candidate: &Coordinates,
    marginal_sd: &DVector<f64>,
) -> Result<f64> {
    let k = target.len();
    if candidate.len() != k || marginal_sd.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: if candidate.len() != k {
                candidate.len()
            } else {
                marginal_sd.len()
            },
        });
    }
    if k == 0 {
        return Ok(0.0);
    }
    let sum: f64 = target
        .as_slice()
        .iter()
        .zip(candidate.as_slice())
        .zip(marginal_sd.iter())
        .map(|((t, c), s)| ((t - c) / s).powi(2))
        .sum();
    Ok(sum.sqrt() / (k as f64).sqrt())
}

/// Normalized distance to a known target in standardized coordinates.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    target: Coordinates,
    marginal_sd: DVector<f64>,
}

impl SimulatedOracle {
    pub fn new(target: Coordinates, mvn: &MvnModel) -> Result<Self> {
        if target.len() != mvn.k() {
            return Err(Error::DimensionMismatch {
                expected: mvn.k(),
                found: target.len(),
            });
        }
        Ok(SimulatedOracle {
            target,
            marginal_sd: mvn.marginal_sd().clone(),
        })
    }

    pub fn target(&self) -> &Coordinates {
        &self.target
    }
}

impl Oracle for SimulatedOracle {
    fn loss(&self, candidate: &Coordinates) -> f64 {
        simulated_loss(&self.target, candidate, &self.marginal_sd).expect("lengths checked")
    }
}

/// A face the oracle judged similar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedFace {
    pub id: String,
    /// Standardized coordinates.
    pub z: Vec<f64>,
    pub loss: Option<f64>,
}

/// Best face seen so far under a numeric oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub id: String,
    pub coords: Vec<f64>,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub accepted: usize,
    pub mean_loss: Option<f64>,
    pub min_loss: Option<f64>,
    pub best_loss: Option<f64>,
}

/// A face shown to the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub coords: Coordinates,
    pub face: FaceVector,
}

/// Candidates awaiting a verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Iteration the batch belongs to; 0 for the initial pool.
    pub t: usize,
    pub candidates: Vec<Candidate>,
    /// Kernel draw that produced the batch (absent for the initial pool).
    pub target: Option<SkewTarget>,
}

/// Oracle's judgement of one candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub loss: Option<f64>,
}

impl Verdict {
    pub fn from_loss(loss: f64, epsilon: f64) -> Self {
        Verdict {
            accepted: loss < epsilon,
            loss: Some(loss),
        }
    }

    pub fn human(accepted: bool) -> Self {
        Verdict {
            accepted,
            loss: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    config: SearchConfig,
    seed: u64,
    /// Next RNG stream to hand out.
    draws: u64,
    t: usize,
    started: bool,
    accepted: Vec<AcceptedFace>,
    best: Option<Best>,
    pool_best_loss: Option<f64>,
    trace: Vec<TraceEntry>,
    converged: bool,
}

impl SearchState {
    pub fn new(config: SearchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(SearchState {
            config,
            seed,
            draws: 0,
            t: 0,
            started: false,
            accepted: Vec::new(),
            best: None,
            pool_best_loss: None,
            trace: Vec::new(),
            converged: false,
        })
    }

    pub fn config(&self) -> &SearchConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn accepted(&self) -> &[AcceptedFace] {
        &self.accepted
    }

    pub fn best(&self) -> Option<&Best> {
        self.best.as_ref()
    }

    /// Best loss over the initial pool.
    pub fn pool_best_loss(&self) -> Option<f64> {
        self.pool_best_loss
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    fn next_rng(&mut self) -> StreamRng {
        let rng = rng::stream(self.seed, self.draws);
        self.draws += 1;
        rng
    }

    /// Choose `initial_pool` distinct indices out of `dataset_len`.
    pub fn sample_pool(&mut self, dataset_len: usize) -> Result<Vec<usize>> {
        let n0 = self.config.initial_pool;
        if n0 > dataset_len {
            return Err(Error::InvalidArgument(format!(
                "initial pool of {n0} exceeds dataset size {dataset_len}"
            )));
        }
        let mut rng = self.next_rng();
        Ok(index::sample(&mut rng, dataset_len, n0).into_vec())
    }

    /// Seed the accepted set from the judged initial pool.
    ///
    /// Fails with [`Error::EmptyAcceptedSet`] when nothing was accepted; the
    /// state is left unstarted so another pool can be drawn.
    pub fn start(&mut self, pool: &Batch, verdicts: &[Verdict], mvn: &MvnModel) -> Result<()> {
        if self.started {
            return Err(Error::InvalidArgument("session already started".into()));
        }
        check_verdicts(pool, verdicts)?;
        if !verdicts.iter().any(|v| v.accepted) {
            return Err(Error::EmptyAcceptedSet);
        }
        for (cand, verdict) in pool.candidates.iter().zip(verdicts) {
            if verdict.accepted {
                self.accepted.push(AcceptedFace {
                    id: cand.id.clone(),
                    z: mvn.standardize(&cand.coords)?.as_slice().to_vec(),
                    loss: verdict.loss,
                });
            }
            self.observe_best(cand, verdict);
        }
        self.pool_best_loss = self.best.as_ref().map(|b| b.loss);
        self.started = true;
        self.update_converged();
        Ok(())
    }

    /// Draw the next kernel centre and generate a batch of candidates.
    pub fn propose(&mut self, eigen: &EigenModel, mvn: &MvnModel) -> Result<Batch> {
        if !self.started {
            return Err(Error::EmptyAcceptedSet);
        }
        let mut rng = self.next_rng();
        let (_, mu_tilde) = draw_mu(&self.accepted, self.config.bandwidth, &mut rng)?;
        let target = SkewTarget::new(mu_tilde, self.config.zeta)?;
        let gen_seed: u64 = rng.random();
        let t = self.t + 1;
        let candidates = generate_faces(eigen, mvn, &target, self.config.per_iter, gen_seed)?
            .into_iter()
            .enumerate()
            .map(|(i, g)| Candidate {
                id: format!("t{t}-{i}"),
                coords: g.coords,
                face: g.face,
            })
            .collect();
        Ok(Batch {
            t,
            candidates,
            target: Some(target),
        })
    }

    /// Record verdicts on the batch from [`SearchState::propose`]:
    /// accepted candidates join the accepted set and `t` advances by one.
    pub fn commit(&mut self, batch: &Batch, verdicts: &[Verdict], mvn: &MvnModel) -> Result<()> {
        if batch.t != self.t + 1 {
            return Err(Error::InvalidArgument(format!(
                "batch for iteration {} committed at iteration {}",
                batch.t, self.t
            )));
        }
        check_verdicts(batch, verdicts)?;
        for (cand, verdict) in batch.candidates.iter().zip(verdicts) {
            if verdict.accepted {
                self.accepted.push(AcceptedFace {
                    id: cand.id.clone(),
                    z: mvn.standardize(&cand.coords)?.as_slice().to_vec(),
                    loss: verdict.loss,
                });
            }
            self.observe_best(cand, verdict);
        }
        self.t = batch.t;
        let losses: Vec<f64> = verdicts.iter().filter_map(|v| v.loss).collect();
        let (mean_loss, min_loss) = if losses.is_empty() {
            (None, None)
        } else {
            (
                Some(losses.iter().sum::<f64>() / losses.len() as f64),
                Some(losses.iter().copied().fold(f64::INFINITY, f64::min)),
            )
        };
        self.trace.push(TraceEntry {
            t: self.t,
            accepted: self.accepted.len(),
            mean_loss,
            min_loss,
            best_loss: self.best.as_ref().map(|b| b.loss),
        });
        self.update_converged();
        Ok(())
    }

    /// Mark convergence by the oracle's explicit choice (a human "this is
    /// the face").
    pub fn declare_match(&mut self) {
        self.converged = true;
    }

    fn observe_best(&mut self, cand: &Candidate, verdict: &Verdict) {
        let Some(loss) = verdict.loss else { return };
        if self.best.as_ref().is_none_or(|b| loss < b.loss) {
            self.best = Some(Best {
                id: cand.id.clone(),
                coords: cand.coords.as_slice().to_vec(),
                loss,
            });
        }
    }

    fn update_converged(&mut self) {
        let eps = self.config.epsilon_star;
        if self
            .accepted
            .iter()
            .any(|a| a.loss.is_some_and(|l| l < eps))
        {
            self.converged = true;
        }
    }

    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }
}

fn check_verdicts(batch: &Batch, verdicts: &[Verdict]) -> Result<()> {
    if verdicts.len() != batch.candidates.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.candidates.len(),
            found: verdicts.len(),
        });
    }
    if let Some(v) = verdicts
        .iter()
        .find(|v| v.loss.is_some_and(|l| l.is_nan() || l < 0.0))
    {
        return Err(Error::InvalidArgument(format!(
            "loss {:?} is not a nonnegative number",
            v.loss
        )));
    }
    Ok(())
}

/// Draw `mu_tilde` from the kernel mixture over the accepted set: choose a
/// centre uniformly, then add `N(0, h^2 I)` noise. Returns the chosen index
/// with the draw.
pub fn draw_mu<R: Rng + ?Sized>(
    accepted: &[AcceptedFace],
    bandwidth: f64,
    rng: &mut R,
) -> Result<(usize, DVector<f64>)> {
    if accepted.is_empty() {
        return Err(Error::EmptyAcceptedSet);
    }
    let i = rng.random_range(0..accepted.len());
    let centre = &accepted[i].z;
    let mu = DVector::from_iterator(
        centre.len(),
        centre
            .iter()
            .map(|&c| c + bandwidth * rng.sample::<f64, _>(StandardNormal)),
    );
    Ok((i, mu))
}

/// A dataset face with its eigenface coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub id: String,
    pub coords: Coordinates,
}

/// Project every dataset face into the eigenface basis.
pub fn project_dataset(dataset: &FaceDataset, eigen: &EigenModel) -> Result<Vec<PoolEntry>> {
    dataset
        .iter()
        .map(|(id, face)| {
            Ok(PoolEntry {
                id: id.to_owned(),
                coords: eigen.project(face)?,
            })
        })
        .collect()
}

/// Draw the initial pool as a batch of candidates (iteration 0).
pub fn initial_batch(
    state: &mut SearchState,
    pool: &[PoolEntry],
    eigen: &EigenModel,
) -> Result<Batch> {
    let picks = state.sample_pool(pool.len())?;
    let candidates = picks
        .into_iter()
        .map(|i| {
            let entry = &pool[i];
            Ok(Candidate {
                id: entry.id.clone(),
                face: eigen.reconstruct(&entry.coords)?,
                coords: entry.coords.clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Batch {
        t: 0,
        candidates,
        target: None,
    })
}

fn judge(batch: &Batch, oracle: &dyn Oracle, epsilon: f64) -> Vec<Verdict> {
    batch
        .candidates
        .iter()
        .map(|c| Verdict::from_loss(oracle.loss(&c.coords), epsilon))
        .collect()
}

/// Sample the initial pool, let the oracle judge it, and seed the accepted
/// set with the faces it accepts.
pub fn init_session(
    pool: &[PoolEntry],
    eigen: &EigenModel,
    mvn: &MvnModel,
    oracle: &dyn Oracle,
    config: SearchConfig,
    seed: u64,
) -> Result<SearchState> {
    let mut state = SearchState::new(config, seed)?;
    let batch = initial_batch(&mut state, pool, eigen)?;
    let verdicts = judge(&batch, oracle, state.config.epsilon);
    state.start(&batch, &verdicts, mvn)?;
    Ok(state)
}

/// Losses of the initial pool that [`init_session`] would draw for `seed`,
/// for calibrating `epsilon` and `epsilon_star` before the session starts.
pub fn initial_pool_losses(
    pool: &[PoolEntry],
    eigen: &EigenModel,
    oracle: &dyn Oracle,
    config: &SearchConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut probe = SearchState::new(config.clone(), seed)?;
    let batch = initial_batch(&mut probe, pool, eigen)?;
    Ok(batch
        .candidates
        .iter()
        .map(|c| oracle.loss(&c.coords))
        .collect())
}

/// Linearly interpolated percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// One synchronous iteration under a numeric oracle. Returns the batch
/// that was judged.
pub fn iterate(
    state: &mut SearchState,
    eigen: &EigenModel,
    mvn: &MvnModel,
    oracle: &dyn Oracle,
) -> Result<Batch> {
    let batch = state.propose(eigen, mvn)?;
    let verdicts = judge(&batch, oracle, state.config.epsilon);
    state.commit(&batch, &verdicts, mvn)?;
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_id: String,
    pub best_coords: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// Iterate until an accepted face beats `epsilon_star` or `max_iters` is
/// reached. An unconverged result still carries the best face seen.
pub fn run(
    state: &mut SearchState,
    eigen: &EigenModel,
    mvn: &MvnModel,
    oracle: &dyn Oracle,
) -> Result<SearchResult> {
    while !state.converged && state.t < state.config.max_iters {
        iterate(state, eigen, mvn, oracle)?;
    }
    let best = state
        .best
        .clone()
        .ok_or_else(|| Error::InvalidArgument("run needs a numeric oracle".into()))?;
    Ok(SearchResult {
        best_id: best.id,
        best_coords: best.coords,
        loss: best.loss,
        iterations: state.t,
        converged: state.converged,
        trace: state.trace.clone(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trace as CSV with header `t,accepted,mean_loss,min_loss,best_loss`.
pub fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from("t,accepted,mean_loss,min_loss,best_loss\n");
    for e in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.t,
            e.accepted,
            opt(e.mean_loss),
            opt(e.min_loss),
            opt(e.best_loss)
        );
    }
    out
}

/// Synthetic problem in coordinate space: identity eigenfaces over `k`
/// coordinates, a standard normal coordinate model, a dataset of
/// `dataset_size` draws from it and a target drawn from it.
#[derive(Clone, Debug)]
pub struct SyntheticProblem {
    pub eigen: EigenModel,
    pub mvn: MvnModel,
    pub pool: Vec<PoolEntry>,
    pub target: Coordinates,
}

impl SyntheticProblem {
    pub fn standard_normal(k: usize, dataset_size: usize, seed: u64) -> Result<Self> {
        let mvn = MvnModel::standard(k);
        let eigen = EigenModel::identity(k, DVector::from_element(k, 1.0))?;
        let mut draws = crate::gaussmodel::sample_mvn(&mvn, dataset_size + 1, seed)?;
        let target = draws.pop().expect("at least one draw");
        let pool = draws
            .into_iter()
            .enumerate()
            .map(|(i, coords)| PoolEntry {
                id: format!("s{i}"),
                coords,
            })
            .collect();
        Ok(SyntheticProblem {
            eigen,
            mvn,
            pool,
            target,
        })
    }

    pub fn oracle(&self) -> SimulatedOracle {
        SimulatedOracle::new(self.target.clone(), &self.mvn).expect("matching dimensions")
    }
}
