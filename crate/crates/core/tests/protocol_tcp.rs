//! The wire protocol over a real socket.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::time::Duration;

use abcde::catalog::Catalog;
use abcde::protocol::{serve, ServerContext, ServerHandle};
use serde_json::{json, Value};

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    fn connect(h: &ServerHandle) -> Client {
        let s = TcpStream::connect(h.local_addr()).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
        Client { reader: BufReader::new(s.try_clone().unwrap()), writer: s, next_id: 1 }
    }

    fn raw(&mut self, line: &str) -> Value {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
        self.read()
    }

    fn read(&mut self) -> Value {
        let mut buf = String::new();
        self.reader.read_line(&mut buf).unwrap();
        serde_json::from_str(&buf).unwrap_or_else(|e| panic!("bad line {buf:?}: {e}"))
    }

    fn call(&mut self, verb: &str, payload: Value) -> Value {
        let id = self.next_id;
        self.next_id += 1;
        let r = self.raw(&json!({ "request_id": id, "verb": verb, "payload": payload }).to_string());
        assert_eq!(r["request_id"], id);
        r
    }

    fn ok(&mut self, verb: &str, payload: Value) -> Value {
        let r = self.call(verb, payload);
        assert_eq!(r["status"], "ok", "{verb}: {r}");
        r["payload"].clone()
    }
}

fn server(limit: usize) -> ServerHandle {
    serve("127.0.0.1:0", ServerContext::new(Arc::new(Catalog::desk()), limit)).unwrap()
}

fn find_class(scene: &Value, class: &str) -> Option<u64> {
    scene["scene"]["instances"]
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["class_id"].as_str().unwrap().ends_with(class))
        .map(|i| i["instance_id"].as_u64().unwrap())
}

#[test]
fn navigate_grab_then_scene_shows_holder() {
    let h = server(4);
    let mut c = Client::connect(&h);
    let created = c.ok("CreateSession", json!({ "seed": 11 }));
    assert_eq!(created["tick"], 0);
    let scene = c.ok("GetScene", Value::Null);
    let ball = find_class(&scene, "_ball").expect("desk scenes hold a ball");
    let nav = c.ok("Act", json!({ "agent": "child", "verb": "NavigateTo", "target": { "instance": ball } }));
    assert_eq!(nav["status"], "Succeeded", "{nav}");
    let grab = c.ok("Act", json!({ "agent": "child", "verb": "Grab", "target": { "instance": ball } }));
    assert_eq!(grab["status"], "Succeeded", "{grab}");
    let scene = c.ok("GetScene", Value::Null);
    let rec = scene["scene"]["instances"]
        .as_array()
        .unwrap()
        .iter()
        .find(|i| i["instance_id"] == ball)
        .unwrap()
        .clone();
    assert_eq!(rec["held_by"], "Child");
    h.shutdown();
}

#[test]
fn same_seed_sessions_agree() {
    let h = server(4);
    let mut a = Client::connect(&h);
    let mut b = Client::connect(&h);
    for c in [&mut a, &mut b] {
        c.ok("CreateSession", json!({ "seed": 99 }));
        c.ok("Act", json!({ "agent": "parent", "verb": "Wander", "wait": false }));
        c.ok("Act", json!({ "agent": "child", "verb": "LookAround" }));
        c.ok("Step", json!({ "n": 40 }));
    }
    let sa = a.ok("GetScene", Value::Null);
    let sb = b.ok("GetScene", Value::Null);
    assert_eq!(sa["hash"], sb["hash"]);
    assert_eq!(sa["scene"], sb["scene"]);
    h.shutdown();
}

#[test]
fn malformed_line_keeps_connection_alive() {
    let h = server(4);
    let mut c = Client::connect(&h);
    let r = c.raw("this is not json");
    assert_eq!(r["status"], "error");
    assert_eq!(r["error"]["code"], "MalformedRequest");
    let r = c.call("Fly", Value::Null);
    assert_eq!(r["error"]["code"], "UnknownVerb");
    let r = c.call("GetScene", Value::Null);
    assert_eq!(r["error"]["code"], "NoSession");
    c.ok("CreateSession", Value::Null);
    let r = c.call("CreateSession", Value::Null);
    assert_eq!(r["error"]["code"], "SessionExists");
    let r = c.raw(r#"{"request_id": 1, "verb": "GetScene"}"#);
    assert_eq!(r["error"]["code"], "NonMonotonicRequestId");
    c.ok("Step", json!({ "n": 1 }));
    h.shutdown();
}

#[test]
fn frames_are_pushed_after_the_response() {
    let h = server(4);
    let mut c = Client::connect(&h);
    c.ok("CreateSession", json!({ "seed": 2 }));
    c.ok("Subscribe", json!({ "frames_every_n_ticks": 5 }));
    let r = c.ok("Step", json!({ "n": 10 }));
    assert_eq!(r["tick"], 10);
    let mut ticks = Vec::new();
    while ticks.len() < 2 {
        let p = c.read();
        if p["push"] == "events" {
            continue;
        }
        assert_eq!(p["push"], "frames");
        assert_eq!(p["frames"].as_array().unwrap().len(), 4);
        ticks.push(p["tick"].as_u64().unwrap());
    }
    assert_eq!(ticks, [5, 10]);
    h.shutdown();
}

#[test]
fn session_limit_answers_busy() {
    let h = server(1);
    let mut a = Client::connect(&h);
    let mut b = Client::connect(&h);
    a.ok("CreateSession", Value::Null);
    let r = b.call("CreateSession", Value::Null);
    assert_eq!(r["error"]["code"], "Busy");
    drop(a);
    // The server notices the closed socket asynchronously.
    let mut ok = false;
    for _ in 0..200 {
        let r = b.call("CreateSession", Value::Null);
        if r["status"] == "ok" {
            ok = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    assert!(ok, "slot was never released");
    h.shutdown();
}

#[test]
fn occupied_port_is_a_bind_failure() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let e = serve(addr, ServerContext::new(Arc::new(Catalog::desk()), 1)).unwrap_err();
    assert_eq!(e.code(), "BindFailure");
}
