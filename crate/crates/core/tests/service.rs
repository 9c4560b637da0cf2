use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ihcq::baseline::BaselineParams;
use ihcq::eval::EvalReport;
use ihcq::fixtures::{Fixture, FixtureKind};
use ihcq::maskops::Polygon;
use ihcq::scoring::{BiomarkerScore, ScoreReport};
use ihcq::service::router;
use ihcq::store::{Annotation, AnnotationDocument, Provenance, SlideMeta, Store};
use ihcq::{Biomarker, CellClass, PatchRegion};

struct Api {
    _dir: tempfile::TempDir,
    root: std::path::PathBuf,
    app: Router,
}

impl Api {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("store");
        let app = router(Store::open(&root).unwrap(), BaselineParams::default());
        Api { _dir: dir, root, app }
    }

    fn store(&self) -> Store {
        Store::open(&self.root).unwrap()
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(body.map(Body::from).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes, headers)
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes, _) = self
            .call(method, uri, body.map(|b| serde_json::to_vec(&b).unwrap()))
            .await;
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }
}

fn ingest(store: &Store, id: &str, img: &image::RgbImage, biomarker: Biomarker) {
    store
        .ingest_rgb(
            img,
            &SlideMeta {
                id: id.into(),
                biomarker,
                resolution: 0.25,
            },
        )
        .unwrap();
}

fn square(id: &str, class: CellClass, i: u32) -> Annotation {
    Annotation {
        id: id.into(),
        class,
        polygon: Polygon::rect(f64::from(i % 10) * 20.0, f64::from(i / 10) * 20.0, 10.0, 10.0).unwrap(),
        provenance: Provenance::Manual,
        confidence: None,
        author: "tester".into(),
        timestamp: None,
    }
}

#[tokio::test]
async fn slides_and_tiles() {
    let api = Api::new();
    let store = api.store();
    let img = image::RgbImage::from_fn(600, 300, |x, y| image::Rgb([x as u8, y as u8, 7]));
    ingest(&store, "b", &img, Biomarker::Her2);
    ingest(&store, "a", &img, Biomarker::Ki67);

    let (status, list) = api.json(Method::GET, "/api/slides", None).await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = list.as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b"]);

    let (status, one) = api.json(Method::GET, "/api/slides/b", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one["biomarker"], "HER2");
    assert!(one["pyramid"]["levels"].is_array());

    let (status, err) = api.json(Method::GET, "/api/slides/zz", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");

    let (status, bytes, headers) = api.call(Method::GET, "/api/slides/a/tiles/0/2_1.png", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, store.get_tile("a", 0, 2, 1).unwrap().bytes);
    assert_eq!(headers[header::CONTENT_TYPE], "image/png");
    assert!(headers[header::CACHE_CONTROL].to_str().unwrap().contains("immutable"));

    for uri in ["/api/slides/a/tiles/0/3_0", "/api/slides/a/tiles/9/0_0", "/api/slides/a/tiles/0/x"] {
        let (status, _, _) = api.call(Method::GET, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }
}

#[tokio::test]
async fn annotation_versions_and_conflicts() {
    let api = Api::new();
    let key = "s_0_0_200x200";
    let mut doc = AnnotationDocument::new(PatchRegion::from_key(key).unwrap());
    doc.annotations.push(square("a", CellClass::Immunopositive, 0));
    let body = serde_json::to_value(&doc).unwrap();

    let (status, _) = api.json(Method::GET, &format!("/api/patches/{key}/annotations"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, saved) = api
        .json(Method::PUT, &format!("/api/patches/{key}/annotations"), Some(body.clone()))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(saved["version"], 1);

    let mut next: AnnotationDocument = serde_json::from_value(saved.clone()).unwrap();
    next.annotations.push(square("b", CellClass::Immunonegative, 1));
    let (status, saved2) = api
        .json(
            Method::PUT,
            &format!("/api/patches/{key}/annotations"),
            Some(serde_json::to_value(&next).unwrap()),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(saved2["version"], 2);

    let (_, latest) = api.json(Method::GET, &format!("/api/patches/{key}/annotations"), None).await;
    assert_eq!(latest, saved2);
    let (_, v1) = api
        .json(Method::GET, &format!("/api/patches/{key}/annotations?version=1"), None)
        .await;
    assert_eq!(v1, saved);

    // Saving against base 0 again loses the race.
    let (status, err) = api
        .json(Method::PUT, &format!("/api/patches/{key}/annotations"), Some(body.clone()))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "conflict");

    let mut bad = body.clone();
    bad["version"] = json!(2);
    bad["annotations"][0]["polygon"] = json!({"vertices": [[0.0, 0.0], [1.0, 1.0]]});
    let (status, err) = api
        .json(Method::PUT, &format!("/api/patches/{key}/annotations"), Some(bad))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "invalid_input");

    let (status, _) = api
        .json(Method::PUT, "/api/patches/other_0_0_200x200/annotations", Some(body))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    // A fresh router over the same directory serves the same state.
    let restarted = router(api.store(), BaselineParams::default());
    let req = Request::get(format!("/api/patches/{key}/annotations")).body(Body::empty()).unwrap();
    let resp = restarted.oneshot(req).await.unwrap();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(serde_json::from_slice::<Value>(&bytes).unwrap(), saved2);
}

#[tokio::test]
async fn presegmentation() {
    let api = Api::new();
    let store = api.store();
    let fx = Fixture::generate(FixtureKind::Disks, 2);
    ingest(&store, "disks", &fx.image, Biomarker::Ki67);
    let blank = image::RgbImage::from_pixel(128, 128, image::Rgb([245, 245, 245]));
    ingest(&store, "blank", &blank, Biomarker::Ki67);

    let (status, doc) = api
        .json(
            Method::POST,
            "/api/patches/blank_0_0_128x128/presegment",
            Some(json!({"predictor": "baseline"})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["annotations"].as_array().unwrap().len(), 0);

    let (status, doc) = api
        .json(
            Method::POST,
            "/api/patches/disks_0_0_350x350/presegment",
            Some(json!({"predictor": "baseline"})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let anns = doc["annotations"].as_array().unwrap();
    assert_eq!(anns.len(), 8);
    assert!(anns.iter().all(|a| a["provenance"] == "model"));
    // Presegmenting does not save.
    assert!(store.document_versions("disks_0_0_350x350").unwrap().is_empty());

    let spurious = Fixture::generate(FixtureKind::Spurious, 3);
    let file = spurious.predictions.clone().unwrap();
    let (status, up) = api
        .json(Method::POST, "/api/predictions", Some(serde_json::from_str(&file.to_json()).unwrap()))
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(up["instances"], file.instances.len());
    let (status, doc) = api
        .json(
            Method::POST,
            &format!("/api/patches/{}/presegment", file.patch.key()),
            Some(json!({"predictor": up["id"]})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["annotations"].as_array().unwrap().len(), file.instances.len());

    let (status, err) = api
        .json(
            Method::POST,
            "/api/patches/blank_0_0_128x128/presegment",
            Some(json!({"predictor": "0000000000000000"})),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
}

#[tokio::test]
async fn scoring() {
    let api = Api::new();
    let store = api.store();
    let key = "k_0_0_200x200";
    let mut doc = AnnotationDocument::new(PatchRegion::from_key(key).unwrap());
    for i in 0..10 {
        let class = if i < 3 { CellClass::Immunopositive } else { CellClass::Immunonegative };
        doc.annotations.push(square(&format!("c{i}"), class, i));
    }
    store.save_document(&doc).unwrap();
    let (status, report) = api.json(Method::POST, &format!("/api/patches/{key}/score"), None).await;
    assert_eq!(status, StatusCode::OK);
    let report: ScoreReport = serde_json::from_value(report).unwrap();
    match report.score {
        BiomarkerScore::Nuclear(n) => assert_eq!(n.percent_positive, 30.0),
        other => panic!("{other:?}"),
    }

    let empty_key = "e_0_0_200x200";
    store
        .save_document(&AnnotationDocument::new(PatchRegion::from_key(empty_key).unwrap()))
        .unwrap();
    let (status, err) = api.json(Method::POST, &format!("/api/patches/{empty_key}/score"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "empty_dataset");

    let her2_key = "h_0_0_200x200";
    let mut her2 = AnnotationDocument::new(PatchRegion::from_key(her2_key).unwrap());
    for i in 0..10 {
        let class = if i < 2 { CellClass::M3IntenseComplete } else { CellClass::M0NoStaining };
        her2.annotations.push(square(&format!("m{i}"), class, i));
    }
    store.save_document(&her2).unwrap();
    let (status, report) = api.json(Method::POST, &format!("/api/patches/{her2_key}/score"), None).await;
    assert_eq!(status, StatusCode::OK);
    let report: ScoreReport = serde_json::from_value(report).unwrap();
    assert!(report.summary().starts_with("3+"), "{}", report.summary());

    let (status, _) = api
        .json(Method::POST, &format!("/api/patches/{key}/score?tau=abc"), None)
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn evaluation() {
    let api = Api::new();
    let store = api.store();
    let fx = Fixture::generate(FixtureKind::Fig5, 0);
    store.save_document(&fx.ground_truth).unwrap();
    let file = fx.predictions.clone().unwrap();
    let (_, up) = api
        .json(Method::POST, "/api/predictions", Some(serde_json::from_str(&file.to_json()).unwrap()))
        .await;

    let (status, report) = api
        .json(
            Method::POST,
            "/api/evaluate",
            Some(json!({"predictions": [up["id"]], "ground_truth": [fx.ground_truth.key()]})),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let report: EvalReport = serde_json::from_value(report).unwrap();
    assert_eq!(format!("{:.2}", report.summary().map_50.unwrap()), "0.67");

    let (status, err) = api
        .json(
            Method::POST,
            "/api/evaluate",
            Some(json!({"predictions": ["ffffffffffffffff"], "ground_truth": [fx.ground_truth.key()]})),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");

    let (status, _) = api.json(Method::POST, "/api/evaluate", Some(json!({"bogus": 1}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
