use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use funnybench::model::wire::{
    connect_external, connect_external_with, decode_f32, encode_f32, serve_tcp, ExternalModel,
    WireError, WireOptions,
};
use funnybench::model::{LinearModel, ModelUnderTest, ReferenceCnn};
use funnybench::render::Image;
use funnybench::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn spawn_server<M: ModelUnderTest + 'static>(model: M) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || serve_tcp(&model, listener));
    format!("tcp://{addr}")
}

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_data(w, h, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn dyadic_linear(h: usize, w: usize, classes: usize) -> LinearModel {
    // multiples of 1/1024 survive the f32 round trip exactly
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    LinearModel {
        height: h,
        width: w,
        weights: (0..classes)
            .map(|_| {
                (0..h * w * 3)
                    .map(|_| rng.random_range(-1024i32..1024) as f64 / 1024.0)
                    .collect()
            })
            .collect(),
        bias: vec![0.0; classes],
    }
}

proptest! {
    #[test]
    fn f32_payloads_round_trip_bit_exactly(bits in prop::collection::vec(any::<u32>(), 0..64)) {
        let values: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).collect();
        let back = decode_f32(&encode_f32(values.iter().copied())).unwrap();
        prop_assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn remote_cnn_matches_in_process_predictions() {
    let net = ReferenceCnn::new(32, 32, 50, 11).unwrap();
    let local = net.clone();
    let remote = connect_external(&spawn_server(net)).unwrap();
    assert!(remote.capabilities().gradients);
    assert!(!remote.capabilities().activations);
    for seed in 0..3 {
        let img = random_image(32, 32, seed);
        let a = local.predict(&img).unwrap();
        let b = remote.predict(&img).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.0.iter().zip(&b.0) {
            assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0), "{x} vs {y}");
        }
        let ga = local.input_gradient(&img, 3).unwrap();
        let gb = remote.input_gradient(&img, 3).unwrap();
        for (x, y) in ga.iter().zip(&gb) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
}

#[test]
fn linear_stub_gradient_is_its_weight_row_bit_exactly() {
    let model = dyadic_linear(4, 4, 3);
    let weights = model.weights.clone();
    let remote = connect_external(&spawn_server(model)).unwrap();
    let img = random_image(4, 4, 9);
    for (t, row) in weights.iter().enumerate() {
        assert_eq!(&remote.input_gradient(&img, t).unwrap(), row);
    }
}

#[test]
fn server_errors_are_reported_as_remote() {
    let remote = connect_external(&spawn_server(dyadic_linear(4, 4, 3))).unwrap();
    let err = remote
        .input_gradient(&random_image(4, 4, 0), 7)
        .unwrap_err();
    assert!(
        matches!(err, Error::Wire(WireError::Remote { ref kind, .. }) if kind == "bad_request"),
        "{err}"
    );
    // wrong resolution
    let err = remote.predict(&random_image(8, 8, 0)).unwrap_err();
    assert!(
        matches!(err, Error::Wire(WireError::Remote { .. })),
        "{err}"
    );
    // the connection stays usable afterwards
    assert_eq!(remote.predict(&random_image(4, 4, 0)).unwrap().len(), 3);
}

#[test]
fn raw_frames_get_structured_replies() {
    let addr = spawn_server(dyadic_linear(4, 4, 3));
    let stream = TcpStream::connect(addr.trim_start_matches("tcp://")).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut ask = |line: &str| -> Value {
        writeln!(writer, "{line}").unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    };
    let hello = ask(r#"{"op":"hello","version":1}"#);
    assert_eq!(hello["version"], json!(1));
    assert_eq!(hello["capabilities"], json!(["predict", "gradient"]));
    assert_eq!(ask("not json")["error"]["kind"], json!("bad_request"));
    assert_eq!(
        ask(r#"{"id":4,"op":"dance"}"#)["error"]["kind"],
        json!("bad_request")
    );
    let bad = ask(r#"{"id":5,"op":"predict","image":"AAAA","h":4,"w":4}"#);
    assert_eq!(bad["id"], json!(5));
    assert_eq!(bad["error"]["kind"], json!("bad_request"));
    let ok = ask(
        &json!({"id": 6, "op": "predict", "image": encode_f32(vec![0.0; 48]), "h": 4, "w": 4})
            .to_string(),
    );
    assert_eq!(ok["id"], json!(6));
    assert_eq!(ok["logits"].as_array().unwrap().len(), 3);
}

#[test]
fn version_mismatch_is_rejected() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let mut w = stream;
        writeln!(
            w,
            r#"{{"op":"hello","version":2,"capabilities":["predict"]}}"#
        )
        .unwrap();
        std::thread::sleep(Duration::from_millis(200));
    });
    let err = connect_external(&format!("tcp://{addr}")).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Wire(WireError::VersionMismatch {
                expected: 1,
                got: 2
            })
        ),
        "{err}"
    );
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let (_stream, _) = listener.accept().unwrap();
        std::thread::sleep(Duration::from_secs(2));
    });
    let opts = WireOptions {
        timeout: Duration::from_millis(150),
    };
    let err = connect_external_with(&format!("tcp://{addr}"), opts).unwrap_err();
    assert!(matches!(err, Error::Wire(WireError::Timeout(_))), "{err}");
}

#[test]
fn bad_endpoints_are_rejected() {
    assert!(matches!(
        connect_external("udp://x").unwrap_err(),
        Error::Wire(WireError::BadEndpoint(_))
    ));
    assert!(matches!(
        connect_external("stdio:").unwrap_err(),
        Error::Wire(WireError::BadEndpoint(_))
    ));
}

#[test]
fn in_memory_streams_work_without_sockets() {
    // a server that answers the handshake and then one predict
    let (client_read, server_write) = std::io::pipe().unwrap();
    let (server_read, client_write) = std::io::pipe().unwrap();
    let model = dyadic_linear(4, 4, 2);
    std::thread::spawn(move || {
        funnybench::model::wire::serve(&model, BufReader::new(server_read), server_write)
    });
    let remote =
        ExternalModel::from_streams(client_read, client_write, WireOptions::default()).unwrap();
    assert_eq!(remote.predict(&Image::new(4, 4)).unwrap().0, vec![0.0, 0.0]);
}
