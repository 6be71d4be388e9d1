use evmx_core::events::{parse_csv, parse_evm, slice, write_csv, write_evm, Event, EventStream, Polarity, SensorGeometry, TimeWindow};
use evmx_core::representation::{accumulate, build_sequence};
use proptest::prelude::*;

fn stream_strategy() -> impl Strategy<Value = EventStream> {
    (1u16..64, 1u16..64).prop_flat_map(|(w, h)| {
        prop::collection::vec((0..w, 0..h, 0u64..2000, any::<bool>()), 0..300).prop_map(move |raw| {
            let mut t = 0;
            let events = raw
                .into_iter()
                .map(|(x, y, dt, on)| {
                    t += dt;
                    Event::new(x, y, t, if on { Polarity::On } else { Polarity::Off })
                })
                .collect();
            EventStream::new(SensorGeometry::new(w, h, "test").unwrap(), events).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn evm_round_trip_is_bit_exact(s in stream_strategy()) {
        let bytes = write_evm(&s);
        let back = parse_evm(&bytes).unwrap();
        prop_assert_eq!(back.events(), s.events());
        prop_assert_eq!(back.geometry().width(), s.geometry().width());
        prop_assert_eq!(back.geometry().height(), s.geometry().height());
        prop_assert_eq!(write_evm(&back), bytes);
    }

    #[test]
    fn csv_through_evm_equals_csv(s in stream_strategy()) {
        let csv = write_csv(&s);
        let direct = parse_csv(&csv, s.geometry().clone()).unwrap();
        let via = parse_evm(&write_evm(&direct)).unwrap();
        prop_assert_eq!(via.events(), direct.events());
        prop_assert_eq!(direct.events(), s.events());
    }

    #[test]
    fn slice_equals_linear_filter(s in stream_strategy(), a in 0u64..60_000, len in 1u64..60_000) {
        let got = slice(&s, a, a + len).unwrap();
        let want: Vec<Event> = s.events().iter().filter(|e| e.t >= a && e.t < a + len).copied().collect();
        prop_assert_eq!(got.events(), &want[..]);
    }

    #[test]
    fn accumulate_equals_naive_loop(s in stream_strategy(), a in 0u64..60_000, len in 1u64..60_000) {
        let win = TimeWindow::new(a, a + len).unwrap();
        let frame = accumulate(&s, win);
        let (w, h) = (s.geometry().width() as usize, s.geometry().height() as usize);
        let mut naive = vec![0u32; 2 * w * h];
        for e in s.events() {
            if e.t >= a && e.t < a + len {
                let c = if e.p == Polarity::On { 0 } else { 1 };
                naive[(c * h + e.y as usize) * w + e.x as usize] += 1;
            }
        }
        prop_assert_eq!(frame.counts(), &naive[..]);
    }

    #[test]
    fn sequence_conserves_events(s in stream_strategy(), slice_us in 1u64..5000) {
        prop_assume!(!s.is_empty());
        let seq = build_sequence(&s, slice_us).unwrap();
        prop_assert_eq!(seq.total(), s.len() as u64);
        let first = s.first_timestamp().unwrap();
        for (i, f) in seq.frames.iter().enumerate() {
            prop_assert_eq!(f.window.start(), first + i as u64 * slice_us);
        }
    }
}

#[test]
fn out_of_order_csv_is_rejected_and_sorted_on_request() {
    let csv = "x,y,t,p\n1,1,10,1\n2,2,5,-1\n";
    assert!(parse_csv(csv, SensorGeometry::davis346()).is_err());
    let (s, _) = evmx_core::events::parse_csv_sorted(csv, SensorGeometry::davis346()).unwrap();
    assert_eq!(s.events()[0].t, 5);
}
