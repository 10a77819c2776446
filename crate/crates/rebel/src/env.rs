//! ContainerWorld: a deterministic-dynamics, partially observable
//! environment with ground-truth predicates and sparse terminal reward.
//!
//! An object is hidden in one of M containers. The initial observation
//! carries a clue naming the true container with probability `clue_accuracy`,
//! otherwise a uniformly random wrong one; the possibly-wrong clue is the
//! deliberate driver of belief drift. The agent must find the object, take
//! it, and deliver it to the goal site. Only opening (or standing at an
//! opened) container reveals its contents.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::predicates::{ObservabilityMask, PredicateSpace};
use crate::{Error, Result};

/// Where the agent can stand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Location {
    Container(usize),
    Goal,
}

/// Where the object is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectPlace {
    Container(usize),
    InHand,
    Delivered,
}

/// The agent's executable actions. `PlaceAtGoal` carries the object to the
/// goal site and deposits it in a single step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    GoTo(usize),
    GoToGoal,
    OpenContainer,
    Take,
    PlaceAtGoal,
}

impl Action {
    /// Fixed index layout for M containers: `GoTo(0..M)`, then `GoToGoal`,
    /// `OpenContainer`, `Take`, `PlaceAtGoal`.
    pub fn index(self, num_containers: usize) -> usize {
        match self {
            Action::GoTo(j) => j,
            Action::GoToGoal => num_containers,
            Action::OpenContainer => num_containers + 1,
            Action::Take => num_containers + 2,
            Action::PlaceAtGoal => num_containers + 3,
        }
    }

    pub fn from_index(idx: usize, num_containers: usize) -> Option<Action> {
        if idx < num_containers {
            Some(Action::GoTo(idx))
        } else if idx == num_containers {
            Some(Action::GoToGoal)
        } else if idx == num_containers + 1 {
            Some(Action::OpenContainer)
        } else if idx == num_containers + 2 {
            Some(Action::Take)
        } else if idx == num_containers + 3 {
            Some(Action::PlaceAtGoal)
        } else {
            None
        }
    }

    /// Size of the full action index space for M containers.
    pub fn space_size(num_containers: usize) -> usize {
        num_containers + 4
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Action::GoTo(j) => write!(f, "goto_container_{j}"),
            Action::GoToGoal => write!(f, "goto_goal"),
            Action::OpenContainer => write!(f, "open_container"),
            Action::Take => write!(f, "take"),
            Action::PlaceAtGoal => write!(f, "place_at_goal"),
        }
    }
}

/// Full latent environment state. Not visible to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentState {
    pub object_location: ObjectPlace,
    pub agent_location: Location,
    pub holding: bool,
    pub opened: Vec<bool>,
    pub steps_elapsed: usize,
}

impl LatentState {
    pub fn delivered(&self) -> bool {
        self.object_location == ObjectPlace::Delivered
    }

    /// Stable FNV-1a hash of the full latent state, used as the
    /// state-grouping baseline key. Independent of process and run.
    pub fn stable_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |byte: u64| {
            h ^= byte;
            h = h.wrapping_mul(0x100000001b3);
        };
        match self.object_location {
            ObjectPlace::Container(j) => {
                mix(1);
                mix(j as u64);
            }
            ObjectPlace::InHand => mix(2),
            ObjectPlace::Delivered => mix(3),
        }
        match self.agent_location {
            Location::Container(j) => {
                mix(4);
                mix(j as u64);
            }
            Location::Goal => mix(5),
        }
        mix(self.holding as u64);
        for &o in &self.opened {
            mix(o as u64);
        }
        mix(self.steps_elapsed as u64);
        h
    }
}

/// What the agent sees after a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub agent_location: Location,
    /// Present iff the last action opened a container or the agent stands at
    /// an already-opened one: (container index, contains the object).
    pub visible_container: Option<(usize, bool)>,
    /// Initial step only: a possibly-wrong hint at the object's container.
    pub clue: Option<usize>,
    pub holding: bool,
    pub done_flag: bool,
}

/// Environment knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub num_containers: usize,
    pub horizon: usize,
    pub clue_accuracy: f64,
    pub step_penalty: f64,
    pub terminal_reward: f64,
    /// Base rng seed; the task seed passed to `reset` is mixed with it.
    pub seed: u64,
    /// When false, the `holding` predicate is never checkable, recovering
    /// steps with fully empty observability masks.
    pub mask_holding_observable: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_containers: 3,
            horizon: 20,
            clue_accuracy: 0.8,
            step_penalty: -0.01,
            terminal_reward: 1.0,
            seed: 0,
            mask_holding_observable: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_containers < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_containers must be >= 2, got {}",
                self.num_containers
            )));
        }
        if self.horizon < 3 {
            return Err(Error::InvalidConfig(format!(
                "horizon must be >= 3, got {}",
                self.horizon
            )));
        }
        if !(0.0..=1.0).contains(&self.clue_accuracy) {
            return Err(Error::InvalidConfig(format!(
                "clue_accuracy must be in [0,1], got {}",
                self.clue_accuracy
            )));
        }
        if self.step_penalty > 0.0 {
            return Err(Error::InvalidConfig(format!(
                "step_penalty must be <= 0, got {}",
                self.step_penalty
            )));
        }
        Ok(())
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: LatentState,
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// False when the requested action was inadmissible and the transition
    /// degenerated to a penalized no-op.
    pub admissible: bool,
}

/// The ContainerWorld environment. Instances are cheap and independent;
/// each rollout gets its own.
#[derive(Debug, Clone)]
pub struct ContainerWorld {
    cfg: EnvConfig,
    space: PredicateSpace,
}

impl ContainerWorld {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let space = PredicateSpace::container_world(cfg.num_containers);
        Ok(Self { cfg, space })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// The K = M + 2 predicate family over this world.
    pub fn predicate_space(&self) -> &PredicateSpace {
        &self.space
    }

    /// Starts an episode. Identical (config, seed) pairs produce identical
    /// episodes: the object position and the clue are drawn from a stream
    /// derived only from those two values.
    pub fn reset(&self, task_seed: u64) -> (LatentState, Observation) {
        let m = self.cfg.num_containers;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, task_seed));
        let object = rng.gen_range(0..m);
        let clue = if rng.gen::<f64>() < self.cfg.clue_accuracy {
            object
        } else {
            // Uniform over the wrong containers.
            let mut wrong = rng.gen_range(0..m - 1);
            if wrong >= object {
                wrong += 1;
            }
            wrong
        };
        let state = LatentState {
            object_location: ObjectPlace::Container(object),
            agent_location: Location::Goal,
            holding: false,
            opened: vec![false; m],
            steps_elapsed: 0,
        };
        let observation = Observation {
            agent_location: Location::Goal,
            visible_container: None,
            clue: Some(clue),
            holding: false,
            done_flag: false,
        };
        (state, observation)
    }

    /// Admissible actions for a state. Never empty; `PlaceAtGoal` appears
    /// only when holding, `OpenContainer` only at an unopened container,
    /// `Take` only at an opened container while not holding.
    pub fn admissible_actions(&self, state: &LatentState) -> Vec<Action> {
        let m = self.cfg.num_containers;
        let mut actions = Vec::new();
        for j in 0..m {
            if state.agent_location != Location::Container(j) {
                actions.push(Action::GoTo(j));
            }
        }
        if state.agent_location != Location::Goal {
            actions.push(Action::GoToGoal);
        }
        if let Location::Container(c) = state.agent_location {
            if !state.opened[c] {
                actions.push(Action::OpenContainer);
            }
            if state.opened[c] && !state.holding {
                actions.push(Action::Take);
            }
        }
        if state.holding {
            actions.push(Action::PlaceAtGoal);
        }
        actions
    }

    /// Admissibility as a mask over the fixed action index space.
    pub fn admissible_mask(&self, state: &LatentState) -> Vec<bool> {
        let mut mask = vec![false; Action::space_size(self.cfg.num_containers)];
        for a in self.admissible_actions(state) {
            mask[a.index(self.cfg.num_containers)] = true;
        }
        mask
    }

    /// Applies one action. Inadmissible actions are penalized no-ops; the
    /// episode continues. Depends only on (state, action).
    pub fn step(&self, state: &LatentState, action: Action) -> Transition {
        let admissible = self
            .admissible_actions(state)
            .iter()
            .any(|a| *a == action);

        let mut next = state.clone();
        next.steps_elapsed += 1;
        let mut reward = self.cfg.step_penalty;
        let mut success = false;
        let mut just_opened: Option<usize> = None;

        if admissible {
            match action {
                Action::GoTo(j) => next.agent_location = Location::Container(j),
                Action::GoToGoal => next.agent_location = Location::Goal,
                Action::OpenContainer => {
                    if let Location::Container(c) = next.agent_location {
                        next.opened[c] = true;
                        just_opened = Some(c);
                    }
                }
                Action::Take => {
                    if let Location::Container(c) = next.agent_location {
                        if next.opened[c] && next.object_location == ObjectPlace::Container(c) {
                            next.object_location = ObjectPlace::InHand;
                            next.holding = true;
                        }
                    }
                }
                Action::PlaceAtGoal => {
                    if next.holding {
                        next.agent_location = Location::Goal;
                        next.object_location = ObjectPlace::Delivered;
                        next.holding = false;
                        reward = self.cfg.terminal_reward;
                        success = true;
                    }
                }
            }
        }

        let done = success || next.steps_elapsed >= self.cfg.horizon;

        // Contents are visible when a container was just opened or the agent
        // stands at an opened one.
        let visible_container = match (just_opened, next.agent_location) {
            (Some(c), _) => Some(c),
            (None, Location::Container(c)) if next.opened[c] => Some(c),
            _ => None,
        }
        .map(|c| (c, next.object_location == ObjectPlace::Container(c)));

        let observation = Observation {
            agent_location: next.agent_location,
            visible_container,
            clue: None,
            holding: next.holding,
            done_flag: done,
        };
        debug_assert!(!next.holding || next.object_location == ObjectPlace::InHand);

        Transition {
            state: next,
            observation,
            reward,
            done,
            admissible,
        }
    }

    /// Ground-truth projection of the latent state onto the K = M + 2
    /// predicates: object-in-container-j for each j, `holding`, `delivered`.
    pub fn true_projection(&self, state: &LatentState) -> Vec<bool> {
        let m = self.cfg.num_containers;
        let mut v = Vec::with_capacity(m + 2);
        for j in 0..m {
            v.push(state.object_location == ObjectPlace::Container(j));
        }
        v.push(state.holding);
        v.push(state.delivered());
        v
    }

    /// Which predicates the post-step observation can verify.
    pub fn observability_mask(
        &self,
        _prev_state: &LatentState,
        _action: Action,
        next_obs: &Observation,
    ) -> ObservabilityMask {
        let m = self.cfg.num_containers;
        let mut mask = ObservabilityMask::none(m + 2);
        if let Some((c, _)) = next_obs.visible_container {
            mask.set(c, true);
        }
        if self.cfg.mask_holding_observable {
            mask.set(m, true);
        }
        if next_obs.done_flag {
            mask.set(m + 1, true);
        }
        mask
    }
}

pub(crate) fn mix_seed(base: u64, task: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(task)
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
