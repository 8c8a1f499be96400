use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{Engine, EngineConfig, LabelBatch, LabelInput};
use super::events::{Action, Mode};
use crate::ballpark::{classify, ClassModel};
use crate::corpus::{Corpus, CorpusSpec};
use crate::error::{Error, Result};
use crate::features::{quantize, FeatureVector};
use crate::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Review the best prospect's hit list.
    Prospects,
    /// Transcribe one zone at a time.
    Sequential,
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prospects" => Ok(Policy::Prospects),
            "sequential" => Ok(Policy::Sequential),
            other => Err(Error::param(format!("unknown policy {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub policy: Policy,
    pub interactions: usize,
    pub seed: u64,
    /// Leading interactions that transcribe sequentially under every policy.
    pub warmup: usize,
    /// False candidates rejected per hit-list review.
    pub max_rejects: usize,
    pub corpus: CorpusSpec,
    /// Trailing instances of each class kept out of the collection for
    /// accuracy measurement.
    pub holdout_per_class: usize,
    pub engine: EngineConfig,
    /// Simulated time between interactions.
    pub step_ms: i64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Prospects,
            interactions: 60,
            seed: 7,
            warmup: 10,
            max_rejects: 5,
            corpus: CorpusSpec {
                classes: 50,
                per_class: 40,
                ..CorpusSpec::default()
            },
            holdout_per_class: 5,
            engine: EngineConfig {
                codebook_k: 32,
                debounce_ms: 0,
                cold_every: 1,
                ..EngineConfig::synthetic()
            },
            step_ms: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub index: usize,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_key: Option<String>,
    /// Positive labels added.
    pub labels: usize,
    pub rejects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub policy: Policy,
    pub seed: u64,
    pub interactions: Vec<Interaction>,
    pub labels: usize,
    /// Mean positive labels per interaction after warm-up.
    pub labels_per_interaction: f64,
    /// Held-out top-1 accuracy after each cycle.
    pub accuracy_trace: Vec<f64>,
    /// Every zone was labeled before the session ended.
    pub exhausted: bool,
    pub peak_per_minute: usize,
}

/// A simulated user with perfect knowledge of the ground truth.
pub struct Simulation {
    pub engine: Engine,
    config: SimulationConfig,
    truth: BTreeMap<String, String>,
    order: Vec<String>,
    holdout: Vec<(String, FeatureVector)>,
}

impl Simulation {
    pub fn new(config: SimulationConfig) -> Result<Self> {
        let corpus = Corpus::generate(&config.corpus)?;
        let per_class = config.corpus.per_class;
        if config.holdout_per_class >= per_class {
            return Err(Error::param("hold-out leaves no instances to label"));
        }
        let mut engine = Engine::new(config.engine.clone());
        let mut truth = BTreeMap::new();
        let mut held = Vec::new();
        for inst in &corpus.instances {
            if inst.index >= per_class - config.holdout_per_class {
                held.push(inst);
                continue;
            }
            let zone = engine.add_word_page(&inst.book_id, &inst.id, inst.image.clone())?;
            truth.insert(zone, inst.label.clone());
        }
        engine.prepare()?;
        let cb = engine.codebook().expect("prepared").clone();
        let holdout = held
            .into_iter()
            .map(|i| Ok((i.label.clone(), quantize(&i.id, &i.image, &cb, &config.engine.features)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<String> = truth.keys().cloned().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        Ok(Self {
            engine,
            config,
            truth,
            order,
            holdout,
        })
    }

    pub fn truth(&self, zone_id: &str) -> Option<&str> {
        self.truth.get(zone_id).map(String::as_str)
    }

    fn now(&self, i: usize) -> Timestamp {
        i as i64 * self.config.step_ms
    }

    /// Transcribes the next unlabeled zone in the seeded order.
    fn widen(&mut self, now: Timestamp) -> Result<Option<Interaction>> {
        let state = self.engine.label_state();
        let Some(zone) = self.order.iter().find(|z| !state.positives.contains_key(*z)).cloned() else {
            return Ok(None);
        };
        let label = self.truth[&zone].clone();
        self.engine.submit_labels(
            LabelBatch {
                batch_id: None,
                user: "simulated".into(),
                labels: vec![LabelInput {
                    zone_id: zone,
                    label: label.clone(),
                    action: Action::New,
                    mode: Some(Mode::Widening),
                }],
            },
            now,
        )?;
        Ok(Some(Interaction {
            index: 0,
            mode: Mode::Widening,
            class_key: Some(label),
            labels: 1,
            rejects: 0,
        }))
    }

    /// Review order: prospects with a positive score, best first; then
    /// every other class with a hit list, most labels first.
    fn review_order(&self, now: Timestamp) -> Vec<String> {
        let mut keys: Vec<String> = self
            .engine
            .prospects(now, usize::MAX)
            .into_iter()
            .filter(|p| p.score > 0.0)
            .map(|p| p.class_key)
            .collect();
        let mut rest: Vec<(usize, &str)> = self
            .engine
            .class_states()
            .filter(|c| c.hitlist.is_some() && !keys.contains(&c.class_key))
            .map(|c| (self.engine.label_state().count(&c.class_key), c.class_key.as_str()))
            .collect();
        rest.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        keys.extend(rest.into_iter().map(|(_, k)| k.to_string()));
        keys
    }

    /// Reviews the first hit list in review order that holds a true
    /// positive: confirms every true positive, rejects up to `max_rejects`
    /// false ones.
    fn deepen(&mut self, now: Timestamp) -> Result<Option<Interaction>> {
        for class_key in self.review_order(now) {
            let Ok(hitlist) = self.engine.hitlist(&class_key) else { continue };
            let state = self.engine.label_state();
            let mut labels = Vec::new();
            let mut rejects = 0;
            for e in &hitlist.entries {
                if e.already_labeled || state.positives.contains_key(&e.zone_id) || state.is_rejected(&class_key, &e.zone_id) {
                    continue;
                }
                let action = if self.truth.get(&e.zone_id) == Some(&class_key) {
                    Action::Confirm
                } else if rejects < self.config.max_rejects {
                    rejects += 1;
                    Action::Reject
                } else {
                    continue;
                };
                labels.push(LabelInput {
                    zone_id: e.zone_id.clone(),
                    label: class_key.clone(),
                    action,
                    mode: Some(Mode::Deepening),
                });
            }
            let confirms = labels.len() - rejects;
            if confirms == 0 {
                continue;
            }
            self.engine.submit_labels(
                LabelBatch {
                    batch_id: None,
                    user: "simulated".into(),
                    labels,
                },
                now,
            )?;
            return Ok(Some(Interaction {
                index: 0,
                mode: Mode::Deepening,
                class_key: Some(class_key),
                labels: confirms,
                rejects,
            }));
        }
        Ok(None)
    }

    /// Held-out top-1 accuracy of the current models.
    pub fn accuracy(&self) -> Result<f64> {
        let models: Vec<ClassModel> = self
            .engine
            .class_states()
            .filter_map(|c| c.model.clone())
            .filter(ClassModel::is_trained)
            .collect();
        if self.holdout.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0;
        for (label, fv) in &self.holdout {
            let top = classify(&fv.histogram, &models, 1)?;
            hits += top.first().is_some_and(|h| &h.class_key == label) as usize;
        }
        Ok(hits as f64 / self.holdout.len() as f64)
    }

    pub fn run(&mut self) -> Result<SessionReport> {
        let mut interactions = Vec::new();
        let mut accuracy_trace = Vec::new();
        let mut exhausted = false;
        for i in 0..self.config.interactions {
            let now = self.now(i);
            let deep = self.config.policy == Policy::Prospects && i >= self.config.warmup;
            let step = if deep {
                match self.deepen(now)? {
                    Some(s) => Some(s),
                    None => self.widen(now)?,
                }
            } else {
                self.widen(now)?
            };
            let Some(mut step) = step else {
                exhausted = true;
                break;
            };
            step.index = i;
            interactions.push(step);
            self.engine.run_cycle(now)?;
            accuracy_trace.push(self.accuracy()?);
        }
        let after: Vec<&Interaction> = interactions.iter().filter(|s| s.index >= self.config.warmup).collect();
        let labels_per_interaction = if after.is_empty() {
            0.0
        } else {
            after.iter().map(|s| s.labels).sum::<usize>() as f64 / after.len() as f64
        };
        let labels: BTreeSet<&str> = self.engine.label_state().positives.keys().map(String::as_str).collect();
        Ok(SessionReport {
            policy: self.config.policy,
            seed: self.config.seed,
            labels: labels.len(),
            labels_per_interaction,
            accuracy_trace,
            exhausted,
            peak_per_minute: self.engine.harvest(None, 60)?.peak_per_minute,
            interactions,
        })
    }
}

/// Runs a whole session; returns the report and the final engine.
pub fn simulate_user(config: SimulationConfig) -> Result<(SessionReport, Engine)> {
    let mut sim = Simulation::new(config)?;
    let report = sim.run()?;
    Ok((report, sim.engine))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(policy: Policy) -> SimulationConfig {
        SimulationConfig {
            policy,
            interactions: 12,
            warmup: 4,
            corpus: CorpusSpec {
                classes: 4,
                per_class: 12,
                seed: 5,
                ..CorpusSpec::default()
            },
            holdout_per_class: 2,
            engine: EngineConfig {
                codebook_k: 8,
                hitlist_limit: 10,
                ..SimulationConfig::default().engine
            },
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn sequential_is_one_label_per_interaction() {
        let (r, e) = simulate_user(tiny(Policy::Sequential)).unwrap();
        assert_eq!(r.labels_per_interaction, 1.0);
        assert_eq!(r.labels, 12);
        assert_eq!(r.accuracy_trace.len(), 12);
        assert_eq!(e.events().len(), 12);
    }

    #[test]
    fn prospects_session_is_deterministic() {
        let (a, ea) = simulate_user(tiny(Policy::Prospects)).unwrap();
        let (b, eb) = simulate_user(tiny(Policy::Prospects)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ea.state_fingerprint().unwrap(), eb.state_fingerprint().unwrap());
        assert!(a.labels >= 12);
        assert!(a.interactions.iter().any(|s| s.mode == Mode::Deepening));
    }

    #[test]
    fn session_stops_when_exhausted() {
        let cfg = SimulationConfig {
            interactions: 100,
            ..tiny(Policy::Sequential)
        };
        let (r, _) = simulate_user(cfg).unwrap();
        assert!(r.exhausted);
        assert_eq!(r.labels, 40);
    }

    #[test]
    fn policy_parses() {
        assert_eq!("prospects".parse::<Policy>().unwrap(), Policy::Prospects);
        assert!("random".parse::<Policy>().is_err());
    }
}
