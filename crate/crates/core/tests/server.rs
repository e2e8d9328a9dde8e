use std::io::{self, BufReader, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::thread;

use popsweeper::corpus::{synthetic_corpus, CorpusSpec, SyntheticCorpus};
use popsweeper::engine::{Backends, Engine, EngineConfig, LogEvent};
use popsweeper::frame::{Frame, ImageEncoding};
use popsweeper::protocol::{encode_request, read_message, write_message, RequestHeader, WireResponse, MAX_PAYLOAD};
use popsweeper::replay::{read_event_log, replay_frames};
use popsweeper::server::Server;

fn engine(corpus: &SyntheticCorpus) -> Arc<Engine> {
    let backends = Backends::scripted(Arc::new(corpus.script.clone()));
    Arc::new(Engine::new(EngineConfig::default(), backends).unwrap())
}

fn frames(corpus: &SyntheticCorpus, session: &str) -> Vec<Frame> {
    corpus
        .manifest
        .iter()
        .enumerate()
        .map(|(i, e)| Frame::new(session, i as u64, e.timestamp_ms, corpus.images[&e.file].clone()))
        .collect()
}

fn request(frame: &Frame) -> Vec<u8> {
    let header = RequestHeader {
        session: frame.session_id().into(),
        frame_id: frame.frame_id(),
        timestamp_ms: frame.timestamp_ms(),
        width: frame.width(),
        height: frame.height(),
        encoding: ImageEncoding::RawRgb8,
    };
    encode_request(&header, frame.pixels())
}

fn roundtrip(stream: &mut TcpStream, payload: &[u8]) -> WireResponse {
    write_message(stream, payload).unwrap();
    let bytes = read_message(&mut BufReader::new(&*stream)).unwrap().expect("a response");
    serde_json::from_slice(&bytes).unwrap()
}

fn clicks(rs: &[WireResponse]) -> Vec<(u64, f64, f64)> {
    rs.iter()
        .filter_map(|r| match r {
            WireResponse::Click { frame_id, x, y, .. } => Some((*frame_id, *x, *y)),
            _ => None,
        })
        .collect()
}

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[test]
fn concurrent_sessions_match_offline_replay() {
    let corpus = synthetic_corpus(&CorpusSpec::default());
    let engine = engine(&corpus);
    let offline = replay_frames(&engine, "offline", frames(&corpus, "offline").into_iter().map(Ok)).unwrap();
    let expected: Vec<WireResponse> = offline.responses.iter().map(WireResponse::from).collect();
    // every tick inside a recorded pop-up is dismissed
    assert_eq!(offline.dismissals(), 35);

    let sink = SharedBuf::default();
    let handle = Server::bind("127.0.0.1:0", engine.clone())
        .unwrap()
        .with_event_sink(Box::new(sink.clone()))
        .spawn()
        .unwrap();
    let addr = handle.local_addr();

    let workers: Vec<_> = (0..4)
        .map(|k| {
            let fs = frames(&corpus, &format!("s{k}"));
            thread::spawn(move || {
                let mut stream = TcpStream::connect(addr).unwrap();
                fs.iter().map(|f| roundtrip(&mut stream, &request(f))).collect::<Vec<_>>()
            })
        })
        .collect();
    for w in workers {
        let got = w.join().unwrap();
        assert_eq!(got.len(), expected.len());
        for (i, r) in got.iter().enumerate() {
            let id = match r {
                WireResponse::Continue { frame_id, .. } | WireResponse::Click { frame_id, .. } => *frame_id,
                WireResponse::Error { error } => panic!("error response: {error:?}"),
            };
            assert_eq!(id, i as u64);
        }
        assert_eq!(clicks(&got), clicks(&expected));
    }

    let mut ids = handle.registry().session_ids();
    ids.sort();
    assert_eq!(ids, ["s0", "s1", "s2", "s3"]);
    handle.shutdown().unwrap();

    let logged = read_event_log(&sink.0.lock().unwrap()[..]).unwrap();
    assert_eq!(logged.len(), 4 * offline.events.len());
    for k in 0..4 {
        let mine: Vec<&LogEvent> = logged.iter().filter(|e| e.session == format!("s{k}")).collect();
        assert_eq!(mine.len(), offline.events.len());
        assert!(mine.windows(2).all(|w| w[0].frame_id < w[1].frame_id));
        for (a, b) in mine.iter().zip(&offline.events) {
            assert_eq!((a.frame_id, a.forwarded, a.click), (b.frame_id, b.forwarded, b.click));
        }
    }
}

#[test]
fn bad_requests_keep_the_connection() {
    let corpus = synthetic_corpus(&CorpusSpec::default());
    let handle = Server::bind("127.0.0.1:0", engine(&corpus)).unwrap().spawn().unwrap();
    let mut stream = TcpStream::connect(handle.local_addr()).unwrap();
    let fs = frames(&corpus, "bad");

    let kind = |r: WireResponse| match r {
        WireResponse::Error { error } => error.kind,
        other => panic!("expected an error, got {other:?}"),
    };
    assert_eq!(kind(roundtrip(&mut stream, b"{not json")), "malformed_header");
    assert_eq!(
        kind(roundtrip(&mut stream, br#"{"session":"bad","frame_id":0,"timestamp_ms":0,"width":2,"height":2,"encoding":"raw_rgb8","extra":1}"#)),
        "malformed_header"
    );
    let mut short = request(&fs[0]);
    short.truncate(short.len() - 3);
    assert_eq!(kind(roundtrip(&mut stream, &short)), "decode_failure");
    let liar = RequestHeader {
        session: "bad".into(),
        frame_id: 0,
        timestamp_ms: 0,
        width: 100,
        height: 100,
        encoding: ImageEncoding::Png,
    };
    let png = fs[0].image().to_png().unwrap();
    assert_eq!(kind(roundtrip(&mut stream, &encode_request(&liar, &png))), "dimension_mismatch");
    let png_header = br#"{"session":"bad","frame_id":0,"timestamp_ms":0,"width":360,"height":640,"encoding":"png"}"#;
    let mut junk = png_header.to_vec();
    junk.extend_from_slice(b"not a png");
    assert_eq!(kind(roundtrip(&mut stream, &junk)), "decode_failure");

    // a valid frame on the same connection still works
    match roundtrip(&mut stream, &request(&fs[0])) {
        WireResponse::Continue { frame_id, error, .. } => assert_eq!((frame_id, error), (0, None)),
        other => panic!("unexpected {other:?}"),
    }
    // PNG-encoded pop-up frame is dismissed
    let popup = fs.iter().find(|f| f.timestamp_ms() >= 2000).unwrap();
    let header = RequestHeader {
        session: "bad".into(),
        frame_id: popup.frame_id(),
        timestamp_ms: popup.timestamp_ms(),
        width: popup.width(),
        height: popup.height(),
        encoding: ImageEncoding::Png,
    };
    let png = popup.image().to_png().unwrap();
    match roundtrip(&mut stream, &encode_request(&header, &png)) {
        WireResponse::Click { x, y, .. } => assert_eq!((x, y), (295.0, 185.0)),
        other => panic!("unexpected {other:?}"),
    }
    // replaying an old frame id is answered, not fatal
    match roundtrip(&mut stream, &request(&fs[1])) {
        WireResponse::Continue { error: Some(e), .. } => assert_eq!(e.kind, "out_of_order_frame"),
        other => panic!("unexpected {other:?}"),
    }
    handle.shutdown().unwrap();
}

#[test]
fn oversized_length_closes_the_connection() {
    let corpus = synthetic_corpus(&CorpusSpec::default());
    let handle = Server::bind("127.0.0.1:0", engine(&corpus)).unwrap().spawn().unwrap();
    let mut stream = TcpStream::connect(handle.local_addr()).unwrap();
    stream.write_all(&((MAX_PAYLOAD as u32) + 1).to_be_bytes()).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let reply: WireResponse = serde_json::from_slice(&read_message(&mut reader).unwrap().unwrap()).unwrap();
    assert!(matches!(reply, WireResponse::Error { ref error } if error.kind == "payload_too_large"));
    assert!(read_message(&mut reader).unwrap().is_none());
    handle.shutdown().unwrap();
}

#[test]
fn bind_failure_is_reported() {
    let corpus = synthetic_corpus(&CorpusSpec::default());
    let first = Server::bind("127.0.0.1:0", engine(&corpus)).unwrap();
    let addr = first.local_addr().unwrap();
    assert!(Server::bind(addr, engine(&corpus)).is_err());
}
