use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoffeeEvent {
    PotRemoved,
    NewPot,
    PotPoured,
    PotEmpty,
    CoffeeGrinding,
}

impl CoffeeEvent {
    pub const ALL: [CoffeeEvent; 5] = [
        CoffeeEvent::PotRemoved,
        CoffeeEvent::NewPot,
        CoffeeEvent::PotPoured,
        CoffeeEvent::PotEmpty,
        CoffeeEvent::CoffeeGrinding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoffeeEvent::PotRemoved => "pot-removed",
            CoffeeEvent::NewPot => "new-pot",
            CoffeeEvent::PotPoured => "pot-poured",
            CoffeeEvent::PotEmpty => "pot-empty",
            CoffeeEvent::CoffeeGrinding => "coffee-grinding",
        }
    }
}

impl fmt::Display for CoffeeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoffeeEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown coffee event {s:?}"))
    }
}

/// Thresholds for the pot state machine, in kg and W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoffeeConfig {
    pub power_threshold_w: f64,
    /// Weight below this means no pot on the scale.
    pub removed_below_kg: f64,
    /// Weight above this after grinding or brewing means fresh coffee.
    pub new_pot_above_kg: f64,
    pub pour_drop_kg: f64,
    pub empty_at_most_kg: f64,
    /// Mass of the empty pot; the reference level before any pot is seen.
    pub pot_mass_kg: f64,
    /// Smoothing factor for the reference level while the weight is steady.
    pub smoothing: f64,
    /// Rises larger than this move the reference immediately.
    pub rise_step_kg: f64,
}

impl Default for CoffeeConfig {
    fn default() -> Self {
        Self {
            power_threshold_w: 40.0,
            removed_below_kg: 0.4,
            new_pot_above_kg: 1.5,
            pour_drop_kg: 0.15,
            empty_at_most_kg: 0.6,
            pot_mass_kg: 0.5,
            smoothing: 0.2,
            rise_step_kg: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Grinding,
    Brewing,
    Fresh,
    Emptying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoffeeInputs {
    pub weight: f64,
    pub grinder_w: f64,
    pub brewer_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoffeeState {
    pub pot_present: bool,
    pub weight: f64,
    pub grinder_power: f64,
    pub brewer_power: f64,
    pub phase: Phase,
    /// Smoothed pot weight while present; kept across removals so a pot
    /// returned lighter counts as a pour.
    pub reference_kg: f64,
    pub filled_kg: f64,
    pub dispensed_kg: f64,
    pub last_change: Option<Timestamp>,
}

impl CoffeeState {
    pub fn new(cfg: &CoffeeConfig) -> Self {
        Self {
            pot_present: false,
            weight: 0.0,
            grinder_power: 0.0,
            brewer_power: 0.0,
            phase: Phase::Idle,
            reference_kg: cfg.pot_mass_kg,
            filled_kg: 0.0,
            dispensed_kg: 0.0,
            last_change: None,
        }
    }

    fn has_coffee(&self) -> bool {
        matches!(self.phase, Phase::Fresh | Phase::Emptying)
    }
}

fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v.max(0.0)
    } else {
        0.0
    }
}

/// One sample of the pot node. Events come out in a fixed order when
/// several fire on the same sample: grinding, removed, new pot, poured, empty.
pub fn coffee_step(
    state: &CoffeeState,
    cfg: &CoffeeConfig,
    inputs: CoffeeInputs,
    t: &Timestamp,
) -> (CoffeeState, Vec<CoffeeEvent>) {
    let mut s = state.clone();
    let mut events = Vec::new();
    let (w, grinder, brewer) = (clean(inputs.weight), clean(inputs.grinder_w), clean(inputs.brewer_w));

    if grinder >= cfg.power_threshold_w && state.grinder_power < cfg.power_threshold_w {
        events.push(CoffeeEvent::CoffeeGrinding);
        s.phase = Phase::Grinding;
    }
    if brewer >= cfg.power_threshold_w && state.brewer_power < cfg.power_threshold_w {
        s.phase = Phase::Brewing;
    }

    let present = w >= cfg.removed_below_kg;
    let mut poured = false;
    if state.pot_present && !present {
        events.push(CoffeeEvent::PotRemoved);
        s.pot_present = false;
    } else if present {
        s.pot_present = true;
        let rise = w - s.reference_kg;
        if rise > cfg.rise_step_kg || (!state.pot_present && rise > 0.0) {
            s.filled_kg += rise;
            s.reference_kg = w;
        } else if -rise >= cfg.pour_drop_kg {
            if s.has_coffee() {
                poured = true;
                s.dispensed_kg += -rise;
                s.phase = Phase::Emptying;
            }
            s.reference_kg = w;
        } else if rise > 0.0 && state.pot_present {
            s.filled_kg += cfg.smoothing * rise;
            s.reference_kg += cfg.smoothing * rise;
        } else if state.pot_present {
            s.reference_kg += cfg.smoothing * rise;
        }

        if matches!(s.phase, Phase::Grinding | Phase::Brewing) && w > cfg.new_pot_above_kg {
            events.push(CoffeeEvent::NewPot);
            s.phase = Phase::Fresh;
        }
        if poured {
            events.push(CoffeeEvent::PotPoured);
        }
        if s.has_coffee() && w <= cfg.empty_at_most_kg {
            events.push(CoffeeEvent::PotEmpty);
            s.phase = Phase::Idle;
        }
    }

    s.weight = w;
    s.grinder_power = grinder;
    s.brewer_power = brewer;
    if !events.is_empty() {
        s.last_change = Some(t.clone());
    }
    (s, events)
}
