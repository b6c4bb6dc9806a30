use std::net::SocketAddr;
use std::sync::Arc;

use loramix_client::{Client, ClientError, MixtureComponent};
use loramix_core::mole::AdapterMixture;
use loramix_service::fixtures::random_state;
use loramix_service::{ServiceOptions, ServiceState};
use reqwest::StatusCode;
use tokio::sync::oneshot;

struct Running {
    addr: SocketAddr,
    state: Arc<ServiceState>,
    stop: Option<oneshot::Sender<()>>,
}

impl Running {
    fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    fn client(&self) -> Client {
        Client::new(&self.url()).unwrap()
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

async fn start(adapters: usize) -> Running {
    let state = Arc::new(random_state(adapters, 4, ServiceOptions::default()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = oneshot::channel();
    tokio::spawn(loramix_service::serve(listener, state.clone(), async {
        let _ = rx.await;
    }));
    Running {
        addr,
        state,
        stop: Some(tx),
    }
}

fn status_of(e: ClientError) -> StatusCode {
    match e {
        ClientError::Status { status, problem } => {
            let p = problem.expect("problem document");
            assert_eq!(p.status, status.as_u16());
            assert!(!p.detail.is_empty());
            status
        }
        other => panic!("expected an error status, got {other}"),
    }
}

#[tokio::test]
async fn health_and_adapter_listing() {
    let svc = start(2).await;
    let c = svc.client();
    let h = c.health().await.unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.base_hash, svc.state.base_hash());
    let list = c.adapters().await.unwrap();
    assert_eq!(list, svc.state.adapters());
    assert_eq!(c.adapters().await.unwrap(), list);

    let empty = start(0).await;
    assert!(empty.client().adapters().await.unwrap().is_empty());
}

#[tokio::test]
async fn mixture_round_trip_and_translation() {
    let svc = start(3).await;
    let c = svc.client();
    let base = c.translate("w3 w1 w4").await.unwrap();
    let components = vec![MixtureComponent::new("a2", 0.75, 1.0), MixtureComponent::new("a0", -0.5, 2.0)];
    let put = c.set_mixture(components.clone()).await.unwrap();
    assert_eq!(put.components, components);
    assert_eq!(put.mixture_hash, AdapterMixture::new(components.clone()).content_hash());
    let got = c.mixture().await.unwrap();
    assert_eq!(got.components, components);
    assert_eq!(got.mixture_hash, put.mixture_hash);

    let t = c.translate("w3 w1 w4").await.unwrap();
    assert_eq!(t.mixture_hash, put.mixture_hash);
    let local = svc.state.translate("w3 w1 w4", None).unwrap();
    assert_eq!((&t.translation, &t.mixture_hash), (&local.translation, &local.mixture_hash));

    let o = c.translate_with("w3 w1 w4", Some(Vec::new())).await.unwrap();
    assert_eq!(o.translation, base.translation);
    assert_eq!(o.mixture_hash, base.mixture_hash);
    assert_eq!(c.mixture().await.unwrap().mixture_hash, put.mixture_hash);

    c.set_mixture(Vec::new()).await.unwrap();
    assert_eq!(c.translate("w3 w1 w4").await.unwrap().translation, base.translation);
}

#[tokio::test]
async fn errors_are_problem_documents() {
    let svc = start(1).await;
    let c = svc.client();
    let e = c.set_mixture(vec![MixtureComponent::new("missing", 1.0, 1.0)]).await.unwrap_err();
    assert_eq!(status_of(e), StatusCode::NOT_FOUND);
    // serde_json writes NaN as null, which the service rejects as data.
    let e = c.set_mixture(vec![MixtureComponent::new("a0", f64::NAN, 1.0)]).await.unwrap_err();
    assert_eq!(status_of(e), StatusCode::UNPROCESSABLE_ENTITY);
    let e = c.translate("  ").await.unwrap_err();
    assert_eq!(status_of(e), StatusCode::UNPROCESSABLE_ENTITY);

    let http = reqwest::Client::new();
    let resp = http
        .put(format!("{}/mixture", svc.url()))
        .header("content-type", "application/json")
        .body(r#"{"components":[{"id":"a0","alpha":1e999,"lambda":1}]}"#)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(resp.headers()["content-type"], "application/problem+json");
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["status"], 422);
    assert_eq!(body["type"], "about:blank");

    let resp = http
        .post(format!("{}/translate", svc.url()))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    assert_eq!(resp.headers()["content-type"], "application/problem+json");
}

#[tokio::test]
async fn cross_origin_requests_are_allowed() {
    let svc = start(1).await;
    let resp = reqwest::Client::new()
        .get(format!("{}/adapters", svc.url()))
        .header("origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_puts_leave_one_of_them_active() {
    let svc = start(3).await;
    let m1 = vec![MixtureComponent::new("a0", 1.0, 1.0)];
    let m2 = vec![MixtureComponent::new("a1", 1.0, 1.0), MixtureComponent::new("a2", -0.5, 1.0)];
    let hashes = [
        AdapterMixture::new(m1.clone()).content_hash(),
        AdapterMixture::new(m2.clone()).content_hash(),
    ];
    for _ in 0..20 {
        let (c1, c2) = (svc.client(), svc.client());
        let (r1, r2) = tokio::join!(c1.set_mixture(m1.clone()), c2.set_mixture(m2.clone()));
        assert!(hashes.contains(&r1.unwrap().active_hash));
        assert!(hashes.contains(&r2.unwrap().active_hash));
        let now = svc.client().mixture().await.unwrap();
        assert!(hashes.contains(&now.mixture_hash));
    }
}

#[test]
fn bad_urls_are_rejected_up_front() {
    assert!(matches!(Client::new("not a url"), Err(ClientError::Url(_))));
}

#[tokio::test]
async fn hashes_survive_the_json_round_trip() {
    let s = start(2).await;
    let c = s.client();
    // Full-precision values: a parser that is off by one ulp changes the hash.
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut next = || {
        x = x.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    for _ in 0..50 {
        let m = vec![
            MixtureComponent::new("a0", next(), next() + 1.0),
            MixtureComponent::new("a1", next(), next() + 1.0),
        ];
        let local = AdapterMixture::new(m.clone()).content_hash();
        let put = c.set_mixture(m.clone()).await.unwrap();
        assert_eq!(put.mixture_hash, local);
        assert_eq!(put.components, m);
        assert_eq!(c.translate("w1 w2").await.unwrap().mixture_hash, local);
    }
}
