//! Stage-2 control chain: code-to-switch conversion, the scanning direction
//! manager over a 16-point compass rose, command words, simulated device
//! ports and a constant-speed car.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::DigitalCode;
use crate::error::{BciError, Result};

pub const ROSE_POINTS: u8 = 16;
pub const ROSE_STEP_DEG: f64 = 360.0 / ROSE_POINTS as f64;
pub const DEFAULT_TICK_HZ: f64 = 20.0;
pub const DEFAULT_CAR_SPEED_MPS: f64 = 0.5;

/// Every movement code is the same trigger; only the idle code is silent.
pub fn convert_code_to_switch(code: DigitalCode) -> bool {
    code != DigitalCode::IDLE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub active: bool,
    pub tick: u64,
}

pub fn switch_stream(codes: &[DigitalCode]) -> Vec<SwitchEvent> {
    codes
        .iter()
        .enumerate()
        .map(|(tick, &c)| SwitchEvent {
            active: convert_code_to_switch(c),
            tick: tick as u64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingVector {
    pub x: f64,
    pub y: f64,
}

impl HeadingVector {
    /// Unit vector `degrees` clockwise from north (east = +x, north = +y).
    pub fn from_bearing(degrees: f64) -> Self {
        let theta = degrees.to_radians();
        HeadingVector {
            x: theta.sin(),
            y: theta.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompassPoint {
    N,
    NNE,
    NE,
    ENE,
    E,
    ESE,
    SE,
    SSE,
    S,
    SSW,
    SW,
    WSW,
    W,
    WNW,
    NW,
    NNW,
}

impl CompassPoint {
    pub const ALL: [CompassPoint; 16] = [
        CompassPoint::N,
        CompassPoint::NNE,
        CompassPoint::NE,
        CompassPoint::ENE,
        CompassPoint::E,
        CompassPoint::ESE,
        CompassPoint::SE,
        CompassPoint::SSE,
        CompassPoint::S,
        CompassPoint::SSW,
        CompassPoint::SW,
        CompassPoint::WSW,
        CompassPoint::W,
        CompassPoint::WNW,
        CompassPoint::NW,
        CompassPoint::NNW,
    ];

    pub fn from_index(index: u8) -> CompassPoint {
        Self::ALL[(index % ROSE_POINTS) as usize]
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; 16] = [
            "N", "NNE", "NE", "ENE", "E", "ESE", "SE", "SSE", "S", "SSW", "SW", "WSW", "W", "WNW",
            "NW", "NNW",
        ];
        NAMES[self as usize]
    }

    pub fn bearing_deg(self) -> f64 {
        self.index() as f64 * ROSE_STEP_DEG
    }
}

impl fmt::Display for CompassPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Position on the rose; 0 is north and indices increase clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DirectionState {
    rose_index: u8,
}

impl DirectionState {
    pub fn new(rose_index: u8) -> Self {
        DirectionState {
            rose_index: rose_index % ROSE_POINTS,
        }
    }

    pub fn rose_index(self) -> u8 {
        self.rose_index
    }

    pub fn compass(self) -> CompassPoint {
        CompassPoint::from_index(self.rose_index)
    }

    pub fn heading(self) -> HeadingVector {
        HeadingVector::from_bearing(self.compass().bearing_deg())
    }
}

/// One switch activation: step clockwise to the next rose point.
pub fn advance_direction(state: DirectionState) -> (DirectionState, HeadingVector) {
    let next = DirectionState::new((state.rose_index + 1) % ROSE_POINTS);
    (next, next.heading())
}

/// Nearest rose point to the bearing of `(x, y)`. A bearing exactly halfway
/// between two points goes to the higher index.
pub fn heading_to_compass(x: f64, y: f64) -> Result<CompassPoint> {
    if !(x.is_finite() && y.is_finite()) || (x == 0.0 && y == 0.0) {
        return Err(BciError::InvalidConfig(format!(
            "heading ({x}, {y}) has no direction"
        )));
    }
    let bearing = x.atan2(y).to_degrees().rem_euclid(360.0);
    let index = (bearing / ROSE_STEP_DEG + 0.5).floor() as u32 % ROSE_POINTS as u32;
    Ok(CompassPoint::from_index(index as u8))
}

/// Four-bit command word; the value is the rose index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommandWord(u8);

impl CommandWord {
    pub fn new(value: u8) -> Result<Self> {
        if value >= ROSE_POINTS {
            return Err(BciError::InvalidConfig(format!("command word {value} exceeds 4 bits")));
        }
        Ok(CommandWord(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl fmt::Display for CommandWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04b}", self.0)
    }
}

impl Serialize for CommandWord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CommandWord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 4 {
            return Err(serde::de::Error::custom(format!("command word {s:?} is not 4 bits")));
        }
        u8::from_str_radix(&s, 2)
            .map(CommandWord)
            .map_err(|_| serde::de::Error::custom(format!("invalid command word {s:?}")))
    }
}

pub fn compass_to_command(point: CompassPoint) -> CommandWord {
    CommandWord(point.index())
}

pub fn command_to_compass(word: CommandWord) -> CompassPoint {
    CompassPoint::from_index(word.0)
}

/// One NDJSON line of the command log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub tick: u64,
    pub word: CommandWord,
    pub compass: CompassPoint,
}

impl CommandRecord {
    pub fn new(tick: u64, word: CommandWord) -> Self {
        CommandRecord {
            tick,
            word,
            compass: command_to_compass(word),
        }
    }

    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("command record serializes");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Acknowledgment {
    pub tick: u64,
    pub sequence: u64,
}

/// Stand-in for the DAQ board: an ordered, tick-stamped sink for command
/// words. Ticks must strictly increase.
pub trait DevicePort {
    fn transmit(&mut self, word: CommandWord, tick: u64) -> Result<Acknowledgment>;
    fn close(&mut self);
    fn is_open(&self) -> bool;
}

#[derive(Debug, Default)]
struct PortCursor {
    last_tick: Option<u64>,
    sent: u64,
}

impl PortCursor {
    fn check(&self, tick: u64) -> Result<()> {
        match self.last_tick {
            Some(last) if tick <= last => Err(BciError::NonMonotonicTick { tick, last }),
            _ => Ok(()),
        }
    }

    fn commit(&mut self, tick: u64) -> Acknowledgment {
        self.last_tick = Some(tick);
        self.sent += 1;
        Acknowledgment {
            tick,
            sequence: self.sent - 1,
        }
    }
}

/// In-memory port that keeps the full log.
#[derive(Debug)]
pub struct LoopbackPort {
    log: Vec<CommandRecord>,
    cursor: PortCursor,
    open: bool,
}

impl Default for LoopbackPort {
    fn default() -> Self {
        LoopbackPort {
            log: Vec::new(),
            cursor: PortCursor::default(),
            open: true,
        }
    }
}

impl LoopbackPort {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log(&self) -> &[CommandRecord] {
        &self.log
    }

    pub fn to_ndjson(&self) -> String {
        self.log.iter().map(CommandRecord::to_json_line).collect()
    }

    /// Drops the stored records; tick ordering is still enforced.
    pub fn clear(&mut self) {
        self.log.clear();
    }
}

impl DevicePort for LoopbackPort {
    fn transmit(&mut self, word: CommandWord, tick: u64) -> Result<Acknowledgment> {
        if !self.open {
            return Err(BciError::PortClosed);
        }
        self.cursor.check(tick)?;
        self.log.push(CommandRecord::new(tick, word));
        Ok(self.cursor.commit(tick))
    }

    fn close(&mut self) {
        self.open = false;
    }

    fn is_open(&self) -> bool {
        self.open
    }
}

/// Appends one NDJSON line per command to a file.
#[derive(Debug)]
pub struct FilePort {
    path: PathBuf,
    file: Option<File>,
    cursor: PortCursor,
}

impl FilePort {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BciError::io(path, e))?;
        Ok(FilePort {
            path: path.to_path_buf(),
            file: Some(file),
            cursor: PortCursor::default(),
        })
    }
}

impl DevicePort for FilePort {
    fn transmit(&mut self, word: CommandWord, tick: u64) -> Result<Acknowledgment> {
        let file = self.file.as_mut().ok_or(BciError::PortClosed)?;
        self.cursor.check(tick)?;
        file.write_all(CommandRecord::new(tick, word).to_json_line().as_bytes())
            .map_err(|e| BciError::io(&self.path, e))?;
        Ok(self.cursor.commit(tick))
    }

    fn close(&mut self) {
        self.file = None;
    }

    fn is_open(&self) -> bool {
        self.file.is_some()
    }
}

/// Streams NDJSON command lines to a TCP peer.
#[derive(Debug)]
pub struct TcpPort {
    peer: String,
    stream: Option<TcpStream>,
    cursor: PortCursor,
}

impl TcpPort {
    pub fn connect(addr: impl ToSocketAddrs + fmt::Display) -> Result<Self> {
        let peer = addr.to_string();
        let stream = TcpStream::connect(addr).map_err(|e| BciError::io(&peer, e))?;
        stream.set_nodelay(true).map_err(|e| BciError::io(&peer, e))?;
        Ok(TcpPort {
            peer,
            stream: Some(stream),
            cursor: PortCursor::default(),
        })
    }
}

impl DevicePort for TcpPort {
    fn transmit(&mut self, word: CommandWord, tick: u64) -> Result<Acknowledgment> {
        let stream = self.stream.as_mut().ok_or(BciError::PortClosed)?;
        self.cursor.check(tick)?;
        stream
            .write_all(CommandRecord::new(tick, word).to_json_line().as_bytes())
            .map_err(|e| BciError::io(&self.peer, e))?;
        Ok(self.cursor.commit(tick))
    }

    fn close(&mut self) {
        if let Some(stream) = self.stream.take() {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
    }

    fn is_open(&self) -> bool {
        self.stream.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x_m: f64,
    pub y_m: f64,
    pub heading: HeadingVector,
    pub speed_mps: f64,
}

impl CarState {
    pub fn at_origin(heading: HeadingVector, speed_mps: f64) -> Self {
        CarState {
            x_m: 0.0,
            y_m: 0.0,
            heading,
            speed_mps,
        }
    }
}

pub fn step_car(car: CarState, dt_s: f64) -> Result<CarState> {
    if !(dt_s >= 0.0 && dt_s.is_finite()) {
        return Err(BciError::InvalidConfig(format!("time step {dt_s} must be >= 0")));
    }
    Ok(CarState {
        x_m: car.x_m + car.heading.x * car.speed_mps * dt_s,
        y_m: car.y_m + car.heading.y * car.speed_mps * dt_s,
        ..car
    })
}

/// State published once per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub tick: u64,
    pub x_m: f64,
    pub y_m: f64,
    pub rose_index: u8,
    pub compass: CompassPoint,
    pub last_code: DigitalCode,
    pub last_switch: u8,
}

/// Single-writer state machine: direction manager plus car. Each tick
/// consumes exactly one code, moves the car and writes the current
/// command word to the port.
#[derive(Debug, Clone)]
pub struct Controller {
    pub direction: DirectionState,
    pub car: CarState,
    tick: u64,
    dt_s: f64,
    last_code: DigitalCode,
    last_switch: bool,
}

impl Controller {
    pub fn new(tick_hz: f64, speed_mps: f64) -> Result<Self> {
        if !(tick_hz > 0.0 && tick_hz.is_finite()) {
            return Err(BciError::InvalidConfig(format!("tick rate {tick_hz} must be positive")));
        }
        if !(speed_mps >= 0.0 && speed_mps.is_finite()) {
            return Err(BciError::InvalidConfig(format!("car speed {speed_mps} must be >= 0")));
        }
        let direction = DirectionState::default();
        Ok(Controller {
            direction,
            car: CarState::at_origin(direction.heading(), speed_mps),
            tick: 0,
            dt_s: 1.0 / tick_hz,
            last_code: DigitalCode::IDLE,
            last_switch: false,
        })
    }

    /// Index of the next tick to run.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn step(&mut self, code: DigitalCode, port: &mut dyn DevicePort) -> Result<TelemetryFrame> {
        self.step_pulse(convert_code_to_switch(code), code, port)
    }

    /// Runs one tick with an explicit switch state; `code` is only recorded.
    /// Manual switch presses use this with the idle code.
    pub fn step_pulse(
        &mut self,
        pulse: bool,
        code: DigitalCode,
        port: &mut dyn DevicePort,
    ) -> Result<TelemetryFrame> {
        if pulse {
            let (next, heading) = advance_direction(self.direction);
            self.direction = next;
            self.car.heading = heading;
        }
        let car = step_car(self.car, self.dt_s)?;
        let word = compass_to_command(self.direction.compass());
        port.transmit(word, self.tick)?;
        self.car = car;
        self.last_code = code;
        self.last_switch = pulse;
        let frame = self.frame_at(self.tick);
        self.tick += 1;
        Ok(frame)
    }

    /// Frame describing the most recently completed tick (tick 0 before any step).
    pub fn snapshot(&self) -> TelemetryFrame {
        self.frame_at(self.tick.saturating_sub(1))
    }

    fn frame_at(&self, tick: u64) -> TelemetryFrame {
        TelemetryFrame {
            tick,
            x_m: self.car.x_m,
            y_m: self.car.y_m,
            rose_index: self.direction.rose_index(),
            compass: self.direction.compass(),
            last_code: self.last_code,
            last_switch: self.last_switch as u8,
        }
    }
}

/// Number of log entries whose word differs from the previous entry (the
/// first entry is compared with `initial`).
pub fn count_state_changes(log: &[CommandRecord], initial: CommandWord) -> usize {
    let mut previous = initial;
    let mut changes = 0;
    for record in log {
        if record.word != previous {
            changes += 1;
        }
        previous = record.word;
    }
    changes
}
