use std::io::{BufRead, BufReader};
use std::net::TcpListener;

use bci_core::classify::{encode_class, DigitalCode};
use bci_core::control::{
    advance_direction, command_to_compass, compass_to_command, count_state_changes, heading_to_compass,
    step_car, switch_stream, CarState, CommandWord, CompassPoint, Controller, DevicePort, DirectionState,
    FilePort, HeadingVector, LoopbackPort, TcpPort,
};
use bci_core::dataset::MovementClass;
use bci_core::BciError;
use proptest::prelude::*;
use serde_json::Value;

fn code(bits: u8) -> DigitalCode {
    DigitalCode::new(bits).unwrap()
}

#[test]
fn every_rose_state_is_self_consistent() {
    for index in 0..16u8 {
        let state = DirectionState::new(index);
        let point = state.compass();
        assert_eq!(point, CompassPoint::from_index(index));
        assert_eq!(point.bearing_deg(), index as f64 * 22.5);
        let h = state.heading();
        assert!((h.x * h.x + h.y * h.y - 1.0).abs() < 1e-12);
        assert_eq!(heading_to_compass(h.x, h.y).unwrap(), point);
        // Scaled headings quantize the same way.
        assert_eq!(heading_to_compass(7.0 * h.x, 7.0 * h.y).unwrap(), point);
        let word = compass_to_command(point);
        assert_eq!(word.value(), index);
        assert_eq!(command_to_compass(word), point);
        let (next, next_heading) = advance_direction(state);
        assert_eq!(next.rose_index(), (index + 1) % 16);
        assert_eq!(next.heading(), next_heading);
    }
    assert_eq!(compass_to_command(CompassPoint::N).to_string(), "0000");
    assert_eq!(compass_to_command(CompassPoint::NNW).to_string(), "1111");
    assert_eq!(heading_to_compass(0.3827, 0.9239).unwrap(), CompassPoint::NNE);
    assert!(heading_to_compass(0.0, 0.0).is_err());
}

#[test]
fn activations_walk_the_rose_clockwise() {
    let mut state = DirectionState::default();
    let names: Vec<&str> = (0..16)
        .map(|_| {
            state = advance_direction(state).0;
            state.compass().name()
        })
        .collect();
    assert_eq!(&names[..4], ["NNE", "NE", "ENE", "E"]);
    assert_eq!(names[15], "N");
    let east = DirectionState::new(4).heading();
    assert!((east.x - 1.0).abs() < 1e-12 && east.y.abs() < 1e-12);
}

#[test]
fn converter_maps_stream_to_pulses() {
    let events = switch_stream(&[code(0b01), code(0b00), code(0b11), code(0b00)]);
    let pulses: Vec<u64> = events.iter().filter(|e| e.active).map(|e| e.tick).collect();
    assert_eq!(pulses, [0, 2]);
}

#[test]
fn thousand_transmits_keep_order() {
    let mut port = LoopbackPort::new();
    for tick in 0..1000u64 {
        let word = CommandWord::new((tick % 16) as u8).unwrap();
        let ack = port.transmit(word, tick * 3 + 1).unwrap();
        assert_eq!(ack.sequence, tick);
    }
    let log = port.log();
    assert_eq!(log.len(), 1000);
    assert!(log.windows(2).all(|w| w[0].tick < w[1].tick));
    assert!(matches!(
        port.transmit(CommandWord::new(0).unwrap(), 5),
        Err(BciError::NonMonotonicTick { tick: 5, .. })
    ));
    assert_eq!(port.log().len(), 1000);
}

fn check_ndjson(text: &str, expected: &[(u64, u8)]) {
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), expected.len());
    for (line, (tick, word)) in lines.iter().zip(expected) {
        let value: Value = serde_json::from_str(line).unwrap();
        assert_eq!(value["tick"], *tick);
        assert_eq!(value["word"], format!("{word:04b}"));
        assert_eq!(value["compass"], CompassPoint::from_index(*word).name());
        assert_eq!(value.as_object().unwrap().len(), 3);
    }
}

#[test]
fn file_port_appends_ndjson() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("commands.ndjson");
    let sent = [(0u64, 0u8), (1, 1), (2, 1), (7, 15)];
    let mut port = FilePort::open(&path).unwrap();
    for (tick, word) in sent {
        port.transmit(CommandWord::new(word).unwrap(), tick).unwrap();
    }
    port.close();
    assert!(!port.is_open());
    assert!(matches!(port.transmit(CommandWord::new(0).unwrap(), 9), Err(BciError::PortClosed)));
    check_ndjson(&std::fs::read_to_string(&path).unwrap(), &sent);
}

#[test]
fn tcp_port_streams_ndjson() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let reader = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        BufReader::new(stream).lines().map(|l| l.unwrap()).collect::<Vec<_>>().join("\n")
    });
    let sent = [(3u64, 4u8), (4, 5), (10, 12)];
    let mut port = TcpPort::connect(addr).unwrap();
    for (tick, word) in sent {
        port.transmit(CommandWord::new(word).unwrap(), tick).unwrap();
    }
    port.close();
    check_ndjson(&reader.join().unwrap(), &sent);
}

#[test]
fn car_kinematics_examples() {
    let east = CarState::at_origin(HeadingVector::from_bearing(90.0), 1.0);
    let moved = step_car(east, 1.0).unwrap();
    assert!((moved.x_m - 1.0).abs() < 1e-12 && moved.y_m.abs() < 1e-12);
    assert_eq!(step_car(east, 0.0).unwrap(), east);
    let north = CarState::at_origin(HeadingVector::from_bearing(0.0), 2.0);
    let moved = step_car(north, 0.5).unwrap();
    assert!(moved.x_m.abs() < 1e-12 && (moved.y_m - 1.0).abs() < 1e-12);
    assert!(step_car(north, -0.1).is_err());
}

#[test]
fn controller_drives_car_along_current_heading() {
    let mut controller = Controller::new(10.0, 2.0).unwrap();
    let mut port = LoopbackPort::new();
    for _ in 0..4 {
        controller.step(encode_class(MovementClass::Rtr), &mut port).unwrap();
    }
    // Now heading east: 10 idle ticks at 2 m/s over 0.1 s each.
    let start = controller.snapshot();
    assert_eq!(start.compass, CompassPoint::E);
    for _ in 0..10 {
        controller.step(DigitalCode::IDLE, &mut port).unwrap();
    }
    let end = controller.snapshot();
    assert!((end.x_m - start.x_m - 2.0).abs() < 1e-9);
    assert!((end.y_m - start.y_m).abs() < 1e-9);
    assert_eq!(end.tick, 13);
    assert_eq!(port.log().len(), 14);
}

#[test]
fn sixteen_pulses_return_to_start() {
    let mut controller = Controller::new(20.0, 0.0).unwrap();
    let mut port = LoopbackPort::new();
    for _ in 0..16 {
        controller.step(code(0b10), &mut port).unwrap();
    }
    assert_eq!(controller.snapshot().rose_index, 0);
    assert_eq!(count_state_changes(port.log(), compass_to_command(CompassPoint::N)), 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn each_pulse_is_exactly_one_state_change(bits in prop::collection::vec(0u8..4, 0..200)) {
        let mut controller = Controller::new(20.0, 0.5).unwrap();
        let mut port = LoopbackPort::new();
        let mut previous = controller.snapshot().rose_index;
        let mut rose_changes = 0;
        for (tick, b) in bits.iter().enumerate() {
            let frame = controller.step(code(*b), &mut port).unwrap();
            prop_assert_eq!(frame.tick, tick as u64);
            let expected = if *b == 0 { previous } else { (previous + 1) % 16 };
            prop_assert_eq!(frame.rose_index, expected);
            if frame.rose_index != previous {
                rose_changes += 1;
            }
            previous = frame.rose_index;
        }
        let pulses = bits.iter().filter(|b| **b != 0).count();
        prop_assert_eq!(rose_changes, pulses);
        prop_assert_eq!(count_state_changes(port.log(), compass_to_command(CompassPoint::N)), pulses);
        prop_assert_eq!(controller.snapshot().rose_index as usize, pulses % 16);
    }

    #[test]
    fn quantization_picks_nearest_point(bearing in 0.0f64..360.0, r in 0.01f64..1e6) {
        let h = HeadingVector::from_bearing(bearing);
        let point = heading_to_compass(r * h.x, r * h.y).unwrap();
        let diff = (point.bearing_deg() - bearing).rem_euclid(360.0);
        let diff = diff.min(360.0 - diff);
        prop_assert!(diff <= 11.25 + 1e-9);
    }
}
