use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{Point, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum EventKind {
    Infect,
    Remove,
    /// First infection suppressed by the truncation cap.
    Truncate,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Infect => "INFECT",
            EventKind::Remove => "REMOVE",
            EventKind::Truncate => "TRUNCATE",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "INFECT" => Ok(EventKind::Infect),
            "REMOVE" => Ok(EventKind::Remove),
            "TRUNCATE" => Ok(EventKind::Truncate),
            other => Err(Error::Parse(format!("unknown event kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub particle: usize,
    pub position: Point,
}

/// Append-only record of infections, removals and truncation, in
/// nondecreasing time order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EventLog {
    dim: usize,
    events: Vec<Event>,
}

const AXES: [&str; MAX_DIM] = ["x", "y", "z"];

impl EventLog {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            events: Vec::new(),
        }
    }

    pub fn from_events(dim: usize, events: Vec<Event>) -> Result<Self> {
        let log = Self { dim, events };
        log.validate()?;
        Ok(log)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub(crate) fn push(&mut self, event: Event) {
        debug_assert!(self.events.last().is_none_or(|e| e.time <= event.time));
        self.events.push(event);
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    /// Times nondecreasing and each particle follows INFECT then REMOVE at
    /// most once each.
    pub fn validate(&self) -> Result<()> {
        use std::collections::HashMap;
        let mut seen: HashMap<usize, EventKind> = HashMap::new();
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            if !e.time.is_finite() || e.time < last {
                return Err(Error::Parse(format!("event {i}: time {} out of order", e.time)));
            }
            last = e.time;
            match e.kind {
                EventKind::Infect => {
                    if seen.insert(e.particle, EventKind::Infect).is_some() {
                        return Err(Error::Parse(format!(
                            "event {i}: particle {} infected twice",
                            e.particle
                        )));
                    }
                }
                EventKind::Remove => match seen.get(&e.particle) {
                    Some(EventKind::Infect) => {
                        seen.insert(e.particle, EventKind::Remove);
                    }
                    _ => {
                        return Err(Error::Parse(format!(
                            "event {i}: particle {} removed while not infected",
                            e.particle
                        )))
                    }
                },
                EventKind::Truncate => {}
            }
        }
        Ok(())
    }

    /// CSV with header `time,kind,particle_id,x[,y[,z]]`; reals carry 17
    /// significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time", "kind", "particle_id"];
        header.extend(&AXES[..self.dim]);
        w.write_record(&header)?;
        for e in &self.events {
            let mut rec = vec![
                format!("{:.16e}", e.time),
                e.kind.as_str().to_string(),
                e.particle.to_string(),
            ];
            rec.extend(e.position.coords(self.dim).iter().map(|c| format!("{c:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let dim = header.len().saturating_sub(3);
        let fixed = ["time", "kind", "particle_id"];
        if dim == 0
            || dim > MAX_DIM
            || header.iter().take(3).ne(fixed)
            || header.iter().skip(3).ne(AXES[..dim].iter().copied())
        {
            return Err(Error::Parse(format!("unexpected event log header {header:?}")));
        }
        let mut events = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: column {i}: {e}", line + 1)))
            };
            let mut pos = [0.0; MAX_DIM];
            for (k, c) in pos.iter_mut().enumerate().take(dim) {
                *c = num(3 + k)?;
            }
            events.push(Event {
                time: num(0)?,
                kind: EventKind::parse(&rec[1])?,
                particle: rec[2]
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {}: particle id: {e}", line + 1)))?,
                position: Point(pos),
            });
        }
        Self::from_events(dim, events)
    }
}
