//! Pour-start detection by tracking a point out of each locked chute.
//!
//! Each side gets a tracked point at its chute center. Optical flow advances
//! the point frame to frame and a drop is reported when the point's signed
//! distance to the chute's bottom edge changes sign.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{RoiLock, Side};
use crate::frame::Frame;
use crate::geometry::{bottom_edge_with_offset, crossed, EdgeLine, Point2};
use crate::optflow::{track, FlowConfig, FlowError, FlowResult, FlowStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("frames {prev} and {curr} are not consecutive")]
    NotConsecutive { prev: u64, curr: u64 },
    #[error("tracker for {0} is not armed")]
    NotArmed(Side),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Armed,
    Dropped,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    /// Shift the bottom edge from the center line down by half the box height.
    pub offset: bool,
    /// Crossings only count when that step's flow magnitude reaches this (px/frame).
    pub min_motion: f64,
    /// Re-seed an armed tracker after this many frames without a crossing.
    pub reseed_period: u64,
    /// Frames to wait after losing the point before re-seeding.
    pub lost_cooldown: u64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self { offset: true, min_motion: 0.2, reseed_period: 150, lost_cooldown: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerState {
    pub side: Side,
    pub point: Point2,
    pub d_prev: f64,
    pub phase: Phase,
    pub seeded_at: u64,
    /// Frame at which the point was lost, while `phase` is `Lost`.
    pub lost_at: Option<u64>,
    pub flow_diag: Option<FlowResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropEvent {
    pub side: Side,
    pub frame: u64,
    pub d_t: f64,
    pub d_prev: f64,
    pub point: Point2,
}

/// The edge a lock's tracker is measured against.
pub fn edge_for(lock: &RoiLock, offset: bool) -> EdgeLine {
    bottom_edge_with_offset(&lock.bbox, offset)
}

pub fn seed(lock: &RoiLock, frame_index: u64, offset: bool) -> TrackerState {
    let point = lock.bbox.center();
    TrackerState {
        side: lock.side,
        point,
        d_prev: edge_for(lock, offset).side_distance(point),
        phase: Phase::Armed,
        seeded_at: frame_index,
        lost_at: None,
        flow_diag: None,
    }
}

/// Applies one flow measurement taken between `frame - 1` and `frame`.
///
/// Split out of [`advance`] so the state machine can be driven by known flows.
pub fn apply_flow(
    state: &mut TrackerState,
    result: FlowResult,
    frame: u64,
    edge: &EdgeLine,
    min_motion: f64,
) -> Option<DropEvent> {
    state.flow_diag = Some(result);
    if result.status == FlowStatus::Lost {
        state.phase = Phase::Lost;
        state.lost_at = Some(frame);
        return None;
    }
    let point = Point2::new(state.point.x + result.flow.u, state.point.y + result.flow.v);
    let d_t = edge.side_distance(point);
    state.point = point;
    if crossed(d_t, state.d_prev) && result.flow.magnitude() >= min_motion {
        state.phase = Phase::Dropped;
        return Some(DropEvent { side: state.side, frame, d_t, d_prev: state.d_prev, point });
    }
    state.d_prev = d_t;
    None
}

fn lost_result() -> FlowResult {
    FlowResult { status: FlowStatus::Lost, flow: Default::default(), residual: f64::NAN, eig_min: 0.0 }
}

/// Advances an armed tracker from `prev` to `curr` (full frames).
///
/// A point too close to the border is treated as lost.
pub fn advance(
    state: &mut TrackerState,
    prev: &Frame,
    curr: &Frame,
    lock: &RoiLock,
    cfg: &PlacementConfig,
    flow: &FlowConfig,
) -> Result<Option<DropEvent>, PlacementError> {
    if state.phase != Phase::Armed {
        return Err(PlacementError::NotArmed(state.side));
    }
    if curr.index() != prev.index() + 1 {
        return Err(PlacementError::NotConsecutive { prev: prev.index(), curr: curr.index() });
    }
    let result = match track(prev, curr, state.point, flow) {
        Ok((r, _)) => r,
        Err(FlowError::OutOfBounds { .. }) => lost_result(),
        Err(e) => return Err(e.into()),
    };
    let edge = edge_for(lock, cfg.offset);
    Ok(apply_flow(state, result, curr.index(), &edge, cfg.min_motion))
}

/// What happened to one side on one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideStep {
    pub side: Side,
    pub frame: u64,
    pub reseeded: bool,
    pub flow: Option<FlowResult>,
    pub point: Point2,
    pub d: f64,
    pub phase: Phase,
    pub event: Option<DropEvent>,
}

struct Slot {
    lock: RoiLock,
    state: TrackerState,
}

/// Per-side trackers driven one frame pair at a time.
pub struct PlacementTracker {
    cfg: PlacementConfig,
    flow: FlowConfig,
    slots: [Option<Slot>; 2],
}

impl PlacementTracker {
    pub fn new(cfg: PlacementConfig, flow: FlowConfig) -> Self {
        Self { cfg, flow, slots: [None, None] }
    }

    /// Starts monitoring a side at `frame_index`. Re-arming replaces any previous state.
    pub fn arm(&mut self, lock: RoiLock, frame_index: u64) {
        let state = seed(&lock, frame_index, self.cfg.offset);
        self.slots[lock.side.slot()] = Some(Slot { lock, state });
    }

    pub fn state(&self, side: Side) -> Option<&TrackerState> {
        self.slots[side.slot()].as_ref().map(|s| &s.state)
    }

    pub fn is_armed(&self, side: Side) -> bool {
        self.slots[side.slot()].is_some()
    }

    /// Advances every armed side from `prev` to `curr`, Left before Right.
    pub fn step(&mut self, prev: &Frame, curr: &Frame) -> Result<Vec<SideStep>, PlacementError> {
        let mut out = Vec::with_capacity(2);
        let t = curr.index();
        for side in Side::BOTH {
            let Some(slot) = self.slots[side.slot()].as_mut() else {
                continue;
            };
            // Only frames after the seed frame can move the point.
            if t <= slot.state.seeded_at {
                continue;
            }
            let mut reseeded = false;
            let mut flow = None;
            let mut event = None;
            match slot.state.phase {
                Phase::Dropped => continue,
                Phase::Lost => {
                    let lost_at = slot.state.lost_at.unwrap_or(t);
                    if t >= lost_at + self.cfg.lost_cooldown {
                        slot.state = seed(&slot.lock, t, self.cfg.offset);
                        reseeded = true;
                    }
                }
                Phase::Armed => {
                    if self.cfg.reseed_period > 0 && t - slot.state.seeded_at >= self.cfg.reseed_period {
                        slot.state = seed(&slot.lock, t, self.cfg.offset);
                        reseeded = true;
                    } else {
                        event = advance(&mut slot.state, prev, curr, &slot.lock, &self.cfg, &self.flow)?;
                        flow = slot.state.flow_diag;
                    }
                }
            }
            out.push(SideStep {
                side,
                frame: t,
                reseeded,
                flow,
                point: slot.state.point,
                d: event.map(|e| e.d_t).unwrap_or(slot.state.d_prev),
                phase: slot.state.phase,
                event,
            });
        }
        Ok(out)
    }
}

/// Runs placement over a full-frame sequence for the given locks.
///
/// Each side is seeded at its lock frame. Events come back in frame order.
pub fn run_placement(
    frames: &[Frame],
    locks: &[RoiLock],
    cfg: &PlacementConfig,
    flow: &FlowConfig,
) -> Result<Vec<DropEvent>, PlacementError> {
    let mut tracker = PlacementTracker::new(*cfg, *flow);
    let mut events = Vec::new();
    let mut pending: Vec<RoiLock> = locks.to_vec();
    pending.sort_by_key(|l| l.locked_at);
    for pair in frames.windows(2) {
        let (prev, curr) = (&pair[0], &pair[1]);
        pending.retain(|l| {
            if l.locked_at <= prev.index() {
                tracker.arm(*l, l.locked_at);
                false
            } else {
                true
            }
        });
        for s in tracker.step(prev, curr)? {
            events.extend(s.event);
        }
    }
    Ok(events)
}
