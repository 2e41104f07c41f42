//! Start the HTTP service on an ephemeral port and drive it the way the
//! annotation UI does: create a task, fetch stimuli, lease, answer, export.
//!
//!     cargo run -p tripletfusion-service --example http_client

use std::sync::Arc;

use serde_json::{json, Value};
use tripletfusion::annotation::{AnnotationService, ServiceConfig};
use tripletfusion::signal::{Signal, SignalKind};
use tripletfusion::triplet::TripletQuery;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let service = Arc::new(AnnotationService::open_system(ServiceConfig::new(dir.path()))?);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(tripletfusion_service::serve_on(listener, service, async {
        let _ = stopped.await;
    }));
    println!("listening on {base}");

    let signal = Signal::generate(SignalKind::Sine, 12, 1)?;
    let http = reqwest::Client::new();
    let created: Value = http
        .post(format!("{base}/tasks"))
        .json(&json!({ "task_id": "demo", "manifest": signal.render_stimuli(), "budget": 6, "seed": 2 }))
        .send()
        .await?
        .json()
        .await?;
    println!("POST /tasks -> {created}");

    let z = signal.values();
    for who in ["ana", "ben"].iter().cycle() {
        let next: Value = http.get(format!("{base}/tasks/demo/next?annotator={who}")).send().await?.json().await?;
        if next["status"] == "no_work" {
            println!("GET next ({who}) -> {next}");
            break;
        }
        let query: TripletQuery = serde_json::from_value(next["query"].clone())?;
        let asset: Value = http.get(format!("{base}/assets/{}", next["reference"]["asset_id"].as_str().unwrap_or_default())).send().await?.json().await?;
        let (i, j, k) = query.zero_based();
        let choice = if (z[i] - z[j]).abs() <= (z[i] - z[k]).abs() { "A" } else { "B" };
        let ack: Value = http
            .post(format!("{base}/tasks/demo/responses"))
            .json(&json!({ "annotator_id": who, "query": query, "choice": choice, "latency_ms": 900 }))
            .send()
            .await?
            .json()
            .await?;
        println!("{who}: {query} (reference color {}) -> {choice}, ack w = {}", asset["rgb"], ack["w"]);
    }

    let progress: Value = http.get(format!("{base}/tasks/demo/progress")).send().await?.json().await?;
    println!("progress: {progress}");
    let export = http.get(format!("{base}/tasks/demo/export")).send().await?.text().await?;
    println!("export:\n{}", export.trim_end());

    let _ = stop.send(());
    server.await??;
    Ok(())
}
