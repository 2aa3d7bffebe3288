//! Fixed daily meal schedule.

use super::GlucosimError;

pub const MINUTES_PER_DAY: u32 = 24 * 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MealEvent {
    pub minute: u32,
    pub grams: f64,
}

/// Meals at fixed minutes of the day, every day. Two meals may not land on
/// the same simulation step.
#[derive(Debug, Clone)]
pub struct MealSchedule {
    events: Vec<MealEvent>,
    dt_minutes: u32,
}

impl MealSchedule {
    /// Breakfast, lunch, dinner: 60 g at 07:00, 80 g at 12:00, 70 g at 18:00.
    pub fn standard_day(dt_minutes: u32) -> Self {
        Self::new(
            vec![
                MealEvent { minute: 7 * 60, grams: 60.0 },
                MealEvent { minute: 12 * 60, grams: 80.0 },
                MealEvent { minute: 18 * 60, grams: 70.0 },
            ],
            dt_minutes,
        )
        .expect("the default meals are hours apart")
    }

    pub fn fasting(dt_minutes: u32) -> Self {
        Self { events: Vec::new(), dt_minutes }
    }

    pub fn new(events: Vec<MealEvent>, dt_minutes: u32) -> Result<Self, GlucosimError> {
        for e in &events {
            if e.minute >= MINUTES_PER_DAY {
                return Err(GlucosimError::MealOutOfDay { minute: e.minute });
            }
        }
        for (i, a) in events.iter().enumerate() {
            for b in &events[i + 1..] {
                if a.minute / dt_minutes == b.minute / dt_minutes {
                    return Err(GlucosimError::OverlappingMeals { a: a.minute, b: b.minute });
                }
            }
        }
        Ok(Self { events, dt_minutes })
    }

    pub fn events(&self) -> &[MealEvent] {
        &self.events
    }

    pub fn total_grams(&self) -> f64 {
        self.events.iter().map(|e| e.grams).sum()
    }

    /// Grams served during the step that starts at `minute_of_day`.
    pub fn grams_at(&self, minute_of_day: u32) -> f64 {
        let step = (minute_of_day % MINUTES_PER_DAY) / self.dt_minutes;
        self.events
            .iter()
            .filter(|e| e.minute / self.dt_minutes == step)
            .map(|e| e.grams)
            .sum()
    }
}
