mod common;

use std::sync::Arc;

use arguide_core::geometry::{BoundingBox2D, Point2};
use arguide_core::scene::SceneSnapshot;
use arguide_core::vision::{
    CallTag, Frame, GatewayConfig, GatewayError, MockProvider, RetryPolicy, RotationAxis, RotationDirection, VisionGateway,
};

use common::fixtures;

fn gateway(dir: &str, retry: RetryPolicy) -> VisionGateway {
    let provider = MockProvider::from_dir(&fixtures().join(dir)).unwrap();
    VisionGateway::new(Arc::new(provider), GatewayConfig { retry, ..GatewayConfig::default() })
}

fn frame(dir: &str, scene: &str) -> Frame {
    Frame::from(&SceneSnapshot::load(&fixtures().join(dir).join("scenes").join(scene)).unwrap())
}

#[tokio::test]
async fn prose_first_reply_is_retried_once() {
    let g = gateway("mock/plan-retry", RetryPolicy::without_backoff());
    let got = g.request_task_plan("turn the machine on", &frame("mock/plan-retry", "s0")).await.unwrap();
    assert_eq!(got.retries, 1);
    assert!(!got.plan.is_empty());

    let one_shot = gateway("mock/plan-retry", RetryPolicy::one_shot());
    let err = one_shot.request_task_plan("turn the machine on", &frame("mock/plan-retry", "s0")).await.unwrap_err();
    assert!(matches!(err, GatewayError::MalformedPlan(_)), "{err:?}");
}

#[tokio::test]
async fn printer_reset_plan_has_the_nozzle_wait() {
    let g = gateway("bundles/printer-reset", RetryPolicy::one_shot());
    let plan = g.request_task_plan("how to clean the 3D printer from this stage", &frame("bundles/printer-reset", "s0")).await.unwrap().plan;
    assert_eq!(plan.len(), 7);
    assert_eq!(plan.device_hint.as_deref(), Some("Prusa"));
    assert!(plan.steps.iter().any(|s| s.instruction.contains("1 minute and 30 seconds") && s.key_components[1] == "01:30"));
}

#[tokio::test]
async fn kitchen_start_button_box() {
    let g = gateway("bundles/kitchen", RetryPolicy::one_shot());
    let r = g.request_bounding_box(&frame("bundles/kitchen", "s1"), "orange Start button", CallTag::default()).await.unwrap();
    assert_eq!(r.bbox, BoundingBox2D::new(412.0, 655.0, 450.0, 710.0).unwrap());
    assert_eq!(r.bbox.key(), "412,655,450,710");
}

#[tokio::test]
async fn print_bed_translation_target() {
    let g = gateway("bundles/printer-reset", RetryPolicy::one_shot());
    let r = g
        .request_translation_target(&frame("bundles/printer-reset", "s3"), "print bed", "Move the print bed back to the center", CallTag::default())
        .await
        .unwrap();
    assert_eq!(r.bbox, BoundingBox2D::new(500.0, 300.0, 560.0, 620.0).unwrap());
    assert_eq!(r.target, Point2::new(390.0, 480.0));
    assert!(!r.target_clamped);
}

#[tokio::test]
async fn toaster_door_rotates_about_x_counterclockwise() {
    let g = gateway("bundles/kitchen", RetryPolicy::one_shot());
    let initial = frame("bundles/kitchen", "s0");
    let r = g
        .request_rotation_info(&initial, &frame("bundles/kitchen", "s3"), "toaster oven door", "Open the toaster oven door", CallTag::default())
        .await
        .unwrap();
    assert_eq!((r.axis, r.direction), (RotationAxis::X, RotationDirection::Counterclockwise));
}

#[tokio::test]
async fn adf_mask_covers_most_of_its_crop() {
    let g = gateway("bundles/printer-clean", RetryPolicy::one_shot());
    let f = frame("bundles/printer-clean", "s1");
    let bbox = g.request_bounding_box(&f, "ADF", CallTag::default()).await.unwrap().bbox;
    let mask = g.request_segmentation(&f, &bbox, CallTag::default()).await.unwrap();
    assert!(mask.coverage() >= 0.3, "coverage {}", mask.coverage());
}

#[tokio::test]
async fn degenerate_boxes() {
    let g = gateway("mock/edge-cases", RetryPolicy::one_shot());
    let f = frame("mock/edge-cases", "s0");

    let speck = g.request_bounding_box(&f, "speck", CallTag::default()).await.unwrap().bbox;
    assert_eq!((speck.width(), speck.height()), (1.0, 1.0));
    let err = g.request_segmentation(&f, &speck, CallTag::default()).await.unwrap_err();
    assert_eq!(err, GatewayError::EmptyMask);

    let dot = g.request_bounding_box(&f, "dot", CallTag::default()).await.unwrap().bbox;
    let mask = g.request_segmentation(&f, &dot, CallTag::default()).await.unwrap();
    assert_eq!((mask.width, mask.height, mask.count()), (1, 1, 1));

    let err = g.request_bounding_box(&f, "flat", CallTag::default()).await.unwrap_err();
    assert!(matches!(err, GatewayError::ZeroAreaBox | GatewayError::Parse { .. }), "{err:?}");
}
