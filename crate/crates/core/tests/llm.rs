use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use codexity_core::llm::{
    classify_output, extract_code, fence, fenced_blocks, generate, probe_reachable, BackendConfig, BackendDescriptor,
    BackendKind, ChatBackend, ChatMessage, GenerationRequest, LlmError, LocalCompletionBackend, MockScript,
    OutputClass, RemoteChatBackend, ScriptedMock,
};
use proptest::prelude::*;
use serde::Deserialize;

const LISTING_1: &str = include_str!("../fixtures/listing1.c");
const LISTING_2: &str = include_str!("../fixtures/listing2.c");

#[derive(Debug, Clone)]
struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Captured {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

enum Reply {
    Status(u16, String),
    // Accept the connection and hang up without answering.
    Drop,
}

/// Minimal HTTP/1.1 server: answers every connection with `reply` and
/// records what it received.
struct Stub {
    endpoint: String,
    seen: Arc<Mutex<Vec<Captured>>>,
    connections: Arc<Mutex<usize>>,
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<Captured> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let mut headers = Vec::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let (k, v) = line.split_once(':')?;
        headers.push((k.trim().to_string(), v.trim().to_string()));
    }
    let len = headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, v)| v.parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some(Captured {
        request_line: request_line.trim_end().to_string(),
        headers,
        body,
    })
}

fn stub(reply: Reply) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let connections = Arc::new(Mutex::new(0));
    let (s, c) = (seen.clone(), connections.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            *c.lock().unwrap() += 1;
            match &reply {
                Reply::Drop => drop(stream),
                Reply::Status(code, body) => {
                    if let Some(req) = read_request(&mut stream) {
                        s.lock().unwrap().push(req);
                    }
                    let resp = format!(
                        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                }
            }
        }
    });
    Stub {
        endpoint,
        seen,
        connections,
    }
}

fn request() -> GenerationRequest {
    GenerationRequest::new(
        vec![ChatMessage::system("be careful"), ChatMessage::user("complete this")],
        0.0,
        "gpt-test",
    )
}

fn remote(endpoint: &str) -> RemoteChatBackend {
    RemoteChatBackend::new(
        BackendDescriptor {
            kind: BackendKind::RemoteChat,
            endpoint: Some(endpoint.to_string()),
            model: "gpt-test".into(),
        },
        5.0,
    )
    .unwrap()
}

#[test]
fn remote_backend_returns_stub_content_byte_for_byte() {
    let content = "Here:\n```c\nint main(void) { return 0; }\n```\n\u{00e9}\t\"quoted\" \\ end";
    let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
    let server = stub(Reply::Status(200, body));
    let mut backend = remote(&server.endpoint).with_api_key(Some("sk-test".into()));

    let result = generate(&request(), &mut backend).unwrap();
    assert_eq!(result.raw_text, content);
    assert_eq!(result.extracted_code.as_deref(), Some("int main(void) { return 0; }"));
    assert!(result.latency_seconds >= 0.0);
    assert_eq!(result.backend.kind, BackendKind::RemoteChat);

    let seen = server.seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(seen[0].header("authorization"), Some("Bearer sk-test"));
    let sent: serde_json::Value = serde_json::from_slice(&seen[0].body).unwrap();
    assert_eq!(
        sent,
        serde_json::json!({
            "model": "gpt-test",
            "messages": [{"role": "system", "content": "be careful"}, {"role": "user", "content": "complete this"}],
            "temperature": 0.0,
            "max_tokens": 1024,
        })
    );
}

#[test]
fn remote_backend_without_key_sends_no_authorization() {
    let body = r#"{"choices":[{"message":{"content":"ok"}}]}"#.to_string();
    let server = stub(Reply::Status(200, body));
    let mut backend = remote(&server.endpoint).with_api_key(None);
    assert_eq!(backend.complete(&request()).unwrap(), "ok");
    assert_eq!(server.seen.lock().unwrap()[0].header("authorization"), None);
}

#[test]
fn http_errors_are_not_retried() {
    let server = stub(Reply::Status(429, "{\"error\":\"slow down\"}".into()));
    let mut backend = remote(&server.endpoint);
    let err = backend.complete(&request()).unwrap_err();
    assert_eq!(
        err,
        LlmError::BackendHttpError {
            status: 429,
            body: "{\"error\":\"slow down\"}".into()
        }
    );
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn long_error_bodies_are_excerpted() {
    let server = stub(Reply::Status(500, "x".repeat(5000)));
    let err = remote(&server.endpoint).complete(&request()).unwrap_err();
    match err {
        LlmError::BackendHttpError { status, body } => {
            assert_eq!(status, 500);
            assert_eq!(body.len(), 512);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn transport_failures_retry_once_then_report_unreachable() {
    let server = stub(Reply::Drop);
    let err = remote(&server.endpoint).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::BackendUnreachable(_)), "{err:?}");
    // Give the accept loop a moment to count the second connection.
    thread::sleep(Duration::from_millis(50));
    assert_eq!(*server.connections.lock().unwrap(), 2);
}

#[test]
fn malformed_success_bodies_are_reported() {
    for body in ["not json", "{\"choices\":[]}", "{}"] {
        let server = stub(Reply::Status(200, body.into()));
        let err = remote(&server.endpoint).complete(&request()).unwrap_err();
        assert!(matches!(err, LlmError::MalformedResponse(_)), "{body}: {err:?}");
    }
}

#[test]
fn local_backend_posts_flattened_prompt() {
    let server = stub(Reply::Status(200, r#"{"text":"int x;\n"}"#.into()));
    let mut backend = LocalCompletionBackend::new(
        BackendDescriptor {
            kind: BackendKind::LocalCompletion,
            endpoint: Some(format!("{}/", server.endpoint)),
            model: "starcoder".into(),
        },
        5.0,
    )
    .unwrap();
    let mut req = request();
    req.temperature = 0.2;
    assert_eq!(backend.complete(&req).unwrap(), "int x;\n");

    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].request_line, "POST /generate HTTP/1.1");
    let sent: serde_json::Value = serde_json::from_slice(&seen[0].body).unwrap();
    assert_eq!(sent["prompt"], req.flattened_prompt());
    assert_eq!(sent["temperature"], 0.2);
    assert_eq!(sent["max_tokens"], 1024);
}

#[test]
fn probe_follows_the_stub() {
    let server = stub(Reply::Status(200, "{}".into()));
    let up = BackendDescriptor {
        kind: BackendKind::RemoteChat,
        endpoint: Some(server.endpoint.clone()),
        model: "m".into(),
    };
    assert!(probe_reachable(&up, Duration::from_secs(1)));

    let closed = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = closed.local_addr().unwrap();
    drop(closed);
    let down = BackendDescriptor {
        endpoint: Some(format!("http://{addr}")),
        ..up.clone()
    };
    assert!(!probe_reachable(&down, Duration::from_secs(1)));
    assert!(probe_reachable(&BackendDescriptor::mock(), Duration::from_secs(1)));
    assert!(!probe_reachable(
        &BackendDescriptor {
            endpoint: None,
            ..up
        },
        Duration::from_secs(1)
    ));
}

#[test]
fn network_kinds_require_an_endpoint() {
    let mut cfg = BackendConfig::remote("http://127.0.0.1:1", "m");
    cfg.descriptor.endpoint = None;
    assert!(matches!(cfg.instantiate(), Err(LlmError::InvalidBackend(_))));
}

#[test]
fn mock_replays_listing_pair_in_order() {
    let mut mock = ScriptedMock::new([LISTING_1, LISTING_2]);
    assert_eq!(generate(&request(), &mut mock).unwrap().raw_text, LISTING_1);
    assert_eq!(generate(&request(), &mut mock).unwrap().raw_text, LISTING_2);
    assert_eq!(
        generate(&request(), &mut mock).unwrap_err(),
        LlmError::ScriptExhausted { consumed: 2 }
    );
}

#[test]
fn empty_mock_is_exhausted_immediately() {
    let mut mock = ScriptedMock::new(Vec::<String>::new());
    assert_eq!(
        generate(&request(), &mut mock).unwrap_err(),
        LlmError::ScriptExhausted { consumed: 0 }
    );
}

#[test]
fn mock_transcripts_are_deterministic() {
    let run = || {
        let mut backend = BackendConfig::mock(MockScript::plain(["a", "```c\nint b;\n```", "c"]))
            .instantiate()
            .unwrap();
        (0..3)
            .map(|_| {
                let r = generate(&request(), backend.as_mut()).unwrap();
                (r.raw_text, r.extracted_code)
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn generate_leaves_the_request_alone() {
    let req = request();
    let before = req.clone();
    let mut mock = ScriptedMock::new(["x"]);
    generate(&req, &mut mock).unwrap();
    assert_eq!(req, before);
    assert_eq!(mock.requests(), &[before]);
}

#[derive(Deserialize)]
struct Labeled {
    text: String,
    label: OutputClass,
}

#[test]
fn hand_labeled_outputs_classify_correctly() {
    let corpus: Vec<Labeled> =
        serde_json::from_str(include_str!("../fixtures/llm/outputs.json")).unwrap();
    assert_eq!(corpus.len(), 50);
    let wrong: Vec<_> = corpus
        .iter()
        .enumerate()
        .filter(|(_, item)| classify_output(&item.text) != item.label)
        .map(|(i, item)| format!("#{i} expected {:?}: {:?}", item.label, item.text))
        .collect();
    assert!(wrong.is_empty(), "{wrong:#?}");
}

#[test]
fn classification_agrees_with_extraction() {
    let corpus: Vec<Labeled> =
        serde_json::from_str(include_str!("../fixtures/llm/outputs.json")).unwrap();
    for item in &corpus {
        assert_eq!(
            extract_code(&item.text).is_some(),
            classify_output(&item.text) == OutputClass::Code
        );
    }
}

#[test]
fn listing_two_in_markdown_is_code() {
    let raw = format!("Fixed version:\n\n{}\n", fence(LISTING_2, "c"));
    assert_eq!(classify_output(&raw), OutputClass::Code);
    assert_eq!(extract_code(&raw).unwrap(), LISTING_2);
}

// Independent scanner for the simple case: three-backtick fences at column
// zero, never nested, always closed.
fn oracle_blocks(text: &str) -> Vec<String> {
    let re = regex::Regex::new(r"(?ms)^```[^\n`]*\n(.*?)\n?^```[ \t]*$").unwrap();
    re.captures_iter(text).map(|c| c[1].to_string()).collect()
}

fn prose_line() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("Here is the program.".to_string()),
        Just("It reads input safely and then prints it back:".to_string()),
        Just("Let me know if this helps!".to_string()),
        "[a-z]{1,8}( [a-z]{1,8}){0,6}[.?]?",
    ]
}

fn code_line() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("#include <stdio.h>".to_string()),
        Just("int main(void) {".to_string()),
        Just("    char buf[16];".to_string()),
        Just("    return 0;".to_string()),
        Just("}".to_string()),
        Just("".to_string()),
        "    [a-z_]{1,6} = [0-9]{1,3};",
    ]
}

fn block() -> impl Strategy<Value = String> {
    (prop_oneof![Just(""), Just("c"), Just("cpp"), Just("C")], prop::collection::vec(code_line(), 1..8))
        .prop_map(|(lang, lines)| format!("```{lang}\n{}\n```", lines.join("\n")))
}

fn response() -> impl Strategy<Value = String> {
    prop::collection::vec(prop_oneof![prose_line(), block(), code_line()], 0..10).prop_map(|parts| parts.join("\n"))
}

proptest! {
    #[test]
    fn fence_scanner_matches_oracle(text in response()) {
        prop_assert_eq!(fenced_blocks(&text), oracle_blocks(&text));
    }

    #[test]
    fn extraction_is_fence_stable(text in response()) {
        if let Some(code) = extract_code(&text) {
            prop_assert_eq!(extract_code(&fence(&code, "c")), Some(code.clone()));
            prop_assert_eq!(extract_code(&fence(&code, "")), Some(code));
        }
    }

    #[test]
    fn extraction_is_fence_stable_on_arbitrary_text(text in "[ -~\n`~]{0,120}") {
        if let Some(code) = extract_code(&text) {
            prop_assert_eq!(extract_code(&fence(&code, "c")), Some(code));
        }
    }

    #[test]
    fn classify_is_total(text in "\\PC{0,200}") {
        let _ = classify_output(&text);
    }
}
