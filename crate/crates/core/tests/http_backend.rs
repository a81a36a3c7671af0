use std::net::SocketAddr;

use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use receipt_ner::backend::{
    Backend, BackendConfig, BackendError, CompletionRequest, GenerationParams, HttpBackend,
};
use receipt_ner::corpus::NECategory;

fn serve(app: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn ask(addr: SocketAddr, retries: u32) -> Result<String, BackendError> {
    let cfg = BackendConfig {
        retries,
        retry_backoff_ms: 1,
        timeout_secs: 5.0,
        ..BackendConfig::http(format!("http://{addr}/"))
    };
    let params = GenerationParams::default();
    HttpBackend::new(&cfg)
        .unwrap()
        .complete(&CompletionRequest {
            receipt_id: "r7",
            category: NECategory::Address,
            prompt: " ### Question: x",
            params: &params,
        })
}

#[test]
fn returns_continuation_text() {
    let addr = serve(Router::new().route("/", post(|| async { r#"{"text":"東京都港区です。"}"# })));
    assert_eq!(ask(addr, 0).unwrap(), "東京都港区です。");
}

#[test]
fn server_error_is_reported_with_provenance() {
    let addr = serve(Router::new().route(
        "/",
        post(|| async { (StatusCode::SERVICE_UNAVAILABLE, "busy") }),
    ));
    match ask(addr, 2).unwrap_err() {
        BackendError::Exhausted {
            receipt_id,
            category,
            attempts,
            last,
        } => {
            assert_eq!(receipt_id, "r7");
            assert_eq!(category, NECategory::Address);
            assert_eq!(attempts, 3);
            assert!(matches!(*last, BackendError::Status { status: 503, .. }));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn malformed_body_is_an_error() {
    let addr = serve(Router::new().route("/", post(|| async { r#"{"generated":"x"}"# })));
    let err = ask(addr, 0).unwrap_err();
    let BackendError::Exhausted { last, .. } = err else {
        panic!("unexpected {err}");
    };
    assert!(matches!(*last, BackendError::MalformedBody(_)));
}
