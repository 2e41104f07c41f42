//! The annotation state machine in process: a task with a pre-sampled pool,
//! annotators leasing and answering queries, one abandoning a lease, then an
//! export fed to the fusion pipeline.
//!
//!     cargo run --release --example annotation_session

use std::sync::Arc;

use tripletfusion::annotation::{AnnotationService, Choice, CreateTask, ManualClock, NextQuery, ServiceConfig};
use tripletfusion::experiment::{run_fusion_pipeline, FusionRequest};
use tripletfusion::prelude::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("tripletfusion-session-{}", std::process::id()));
    let signal = Signal::generate(SignalKind::TaskALike, 40, 3)?;
    let clock = Arc::new(ManualClock::new(0));
    let service = AnnotationService::open(ServiceConfig::new(&dir), clock.clone())?;
    let task = service.create_task(CreateTask {
        task_id: Some("green".into()),
        manifest: signal.render_stimuli(),
        budget: None,
        k: Some(15.0),
        seed: 1,
        lease_timeout_s: Some(120.0),
    })?;
    println!("task {task}: {} queries", service.progress(&task)?.total);

    // "drifter" takes a query and walks away; it is dealt again after the lease expires.
    let NextQuery::Query(abandoned) = service.next_query(&task, "drifter")? else { unreachable!() };
    println!("drifter leased {} until t = {} ms", abandoned.query, abandoned.lease_expires_at);
    clock.advance(200_000);

    let z = signal.values().to_vec();
    let annotators = ["ana", "ben", "chi"];
    let mut turn = 0;
    loop {
        let who = annotators[turn % annotators.len()];
        turn += 1;
        match service.next_query(&task, who)? {
            NextQuery::Query(a) => {
                if a.query == abandoned.query {
                    println!("{who} picked up the abandoned query {}", a.query);
                }
                // Reference swatch vs option A (index j) and option B (index k).
                let (i, j, k) = a.query.zero_based();
                let choice = if (z[i] - z[j]).abs() <= (z[i] - z[k]).abs() { Choice::A } else { Choice::B };
                service.submit_response(&task, who, a.query, choice, 1_200)?;
                clock.advance(1_200);
            }
            NextQuery::NoWork { .. } => break,
        }
    }
    let progress = service.progress(&task)?;
    println!("answered {}/{}: {:?}", progress.answered, progress.total, progress.per_annotator);

    let (labels, summary) = service.write_export(&task, &dir.join("export"))?;
    println!("exported {} and {}", labels.display(), summary.display());
    std::fs::write(dir.join("signal.csv"), signal.to_csv())?;
    let mut req = FusionRequest::new(&labels, dir.join("fused"));
    req.signal_path = Some(dir.join("signal.csv"));
    req.solver.restarts = 4;
    let report = run_fusion_pipeline(&req)?;
    println!("fused embedding rho vs truth: {:.4}", report.fits[0].rho.unwrap_or(f64::NAN));
    Ok(())
}
