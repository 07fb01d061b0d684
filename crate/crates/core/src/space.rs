//! Enumeration of finite state spaces with a stable bijective index.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::kernel::AoiModel;
use crate::model::{SystemState, UserState};

/// Default cap on the number of enumerated states.
pub const DEFAULT_STATE_CAP: u128 = 10_000_000;

/// How states are represented and which ones are listed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// Receiver ages only (ARQ and FR HARQ); transmitter ages and retransmission
    /// counts do not influence the dynamics and are fixed to `(1, 0)`.
    AgesOnly,
    /// Every `(rx, tx, retx)` tuple per user.
    FullRaw,
    /// Full tuples reachable from the initial state under some policy.
    FullReachable,
}

#[derive(Debug, Clone)]
enum Lookup {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

/// Ordered list of states with an index map. States are ordered by their
/// mixed-radix code, user 1 most significant.
#[derive(Debug, Clone)]
pub struct StateSpace {
    kind: SpaceKind,
    users: usize,
    max_age: u32,
    max_retx: u32,
    states: Vec<SystemState>,
    codes: Vec<u64>,
    lookup: Lookup,
}

const ABSENT: u32 = u32::MAX;

impl StateSpace {
    /// Natural space of the model: ages only for ARQ/FR, reachable tuples for HARQ.
    pub fn enumerate(model: &AoiModel) -> Result<Self> {
        Self::enumerate_with(model, Self::default_kind(model), DEFAULT_STATE_CAP)
    }

    pub fn default_kind(model: &AoiModel) -> SpaceKind {
        if model.is_harq() {
            SpaceKind::FullReachable
        } else {
            SpaceKind::AgesOnly
        }
    }

    pub fn enumerate_with(model: &AoiModel, kind: SpaceKind, cap: u128) -> Result<Self> {
        let users = model.users();
        let n = model.max_age();
        let r = model.max_retx();
        let per_user: u128 = match kind {
            SpaceKind::AgesOnly => u128::from(n),
            _ => u128::from(n) * u128::from(n) * u128::from(r + 1),
        };
        let raw = per_user.checked_pow(users as u32).unwrap_or(u128::MAX);
        let mut space = Self {
            kind,
            users,
            max_age: n,
            max_retx: r,
            states: Vec::new(),
            codes: Vec::new(),
            lookup: Lookup::Sparse(HashMap::new()),
        };
        match kind {
            SpaceKind::AgesOnly | SpaceKind::FullRaw => {
                if raw > cap {
                    return Err(Error::StateSpaceTooLarge { size: raw, cap });
                }
                let raw = raw as u64;
                space.codes = (0..raw).collect();
                space.states = space.codes.iter().map(|&c| space.decode(c)).collect();
                space.lookup = Lookup::Dense((0..raw as u32).collect());
            }
            SpaceKind::FullReachable => {
                let mut seen: HashSet<u64> = HashSet::new();
                let mut queue = VecDeque::new();
                let s0 = model.initial_state().clone();
                seen.insert(space.encode(&s0));
                queue.push_back(s0);
                while let Some(s) = queue.pop_front() {
                    for a in model.valid_actions(&s) {
                        for t in model.transitions(&s, a)? {
                            let c = space.encode(&t.next);
                            if seen.insert(c) {
                                if seen.len() as u128 > cap {
                                    return Err(Error::StateSpaceTooLarge {
                                        size: seen.len() as u128,
                                        cap,
                                    });
                                }
                                queue.push_back(t.next);
                            }
                        }
                    }
                }
                let mut codes: Vec<u64> = seen.into_iter().collect();
                codes.sort_unstable();
                space.states = codes.iter().map(|&c| space.decode(c)).collect();
                space.lookup = if raw <= 4 * codes.len() as u128 + 1024 && raw <= cap {
                    let mut dense = vec![ABSENT; raw as usize];
                    for (i, &c) in codes.iter().enumerate() {
                        dense[c as usize] = i as u32;
                    }
                    Lookup::Dense(dense)
                } else {
                    Lookup::Sparse(codes.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect())
                };
                space.codes = codes;
            }
        }
        Ok(space)
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn states(&self) -> &[SystemState] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &SystemState {
        &self.states[index]
    }

    fn digit(&self, u: &UserState) -> u64 {
        let n = u64::from(self.max_age);
        match self.kind {
            SpaceKind::AgesOnly => u64::from(u.rx - 1),
            _ => ((u64::from(u.rx - 1) * n) + u64::from(u.tx - 1)) * u64::from(self.max_retx + 1) + u64::from(u.retx),
        }
    }

    fn radix(&self) -> u64 {
        let n = u64::from(self.max_age);
        match self.kind {
            SpaceKind::AgesOnly => n,
            _ => n * n * u64::from(self.max_retx + 1),
        }
    }

    /// Mixed-radix code of a state (ignores tx/retx for ages-only spaces).
    pub fn encode(&self, state: &SystemState) -> u64 {
        let radix = self.radix();
        state.users.iter().fold(0, |acc, u| acc * radix + self.digit(u))
    }

    fn decode(&self, mut code: u64) -> SystemState {
        let radix = self.radix();
        let n = u64::from(self.max_age);
        let r1 = u64::from(self.max_retx + 1);
        let mut users = vec![UserState::new(1, 1, 0); self.users];
        for slot in users.iter_mut().rev() {
            let d = code % radix;
            code /= radix;
            *slot = match self.kind {
                SpaceKind::AgesOnly => UserState::new(d as u32 + 1, 1, 0),
                _ => {
                    let retx = (d % r1) as u32;
                    let rest = d / r1;
                    UserState::new((rest / n) as u32 + 1, (rest % n) as u32 + 1, retx)
                }
            };
        }
        SystemState::new(users)
    }

    fn in_range(&self, state: &SystemState) -> bool {
        state.len() == self.users
            && state.users.iter().all(|u| {
                (1..=self.max_age).contains(&u.rx)
                    && (self.kind == SpaceKind::AgesOnly
                        || ((1..=self.max_age).contains(&u.tx) && u.retx <= self.max_retx))
            })
    }

    /// Index of `state`, if enumerated.
    pub fn get(&self, state: &SystemState) -> Option<usize> {
        if !self.in_range(state) {
            return None;
        }
        let code = self.encode(state);
        let idx = match &self.lookup {
            Lookup::Dense(v) => v.get(code as usize).copied().unwrap_or(ABSENT),
            Lookup::Sparse(m) => m.get(&code).copied().unwrap_or(ABSENT),
        };
        (idx != ABSENT).then_some(idx as usize)
    }

    pub fn index_of(&self, state: &SystemState) -> Result<usize> {
        self.get(state)
            .ok_or_else(|| Error::StateNotInSpace(state.to_string()))
    }

    /// Representative of `state` in this space (drops tx/retx for ages-only spaces).
    pub fn canonical(&self, state: &SystemState) -> SystemState {
        match self.kind {
            SpaceKind::AgesOnly => SystemState::from_ages(&state.ages()),
            _ => state.clone(),
        }
    }

    /// Stable identity of the layout, used by policy files.
    pub fn signature(&self) -> String {
        format!(
            "{:?}/M={}/N={}/R={}/S={}",
            self.kind,
            self.users,
            self.max_age,
            self.max_retx,
            self.len()
        )
    }
}
