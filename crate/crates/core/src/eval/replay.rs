//! Replays labeled bundles through the planner and the compiler.

use std::sync::Arc;

use futures::future::join_all;
use thiserror::Error;

use super::bundle::FixtureBundle;
use super::metrics::{CallRecord, Component, StepOutcome};
use crate::compiler::assets::AssetLibrary;
use crate::compiler::Compiler;
use crate::vision::{
    normalize_component, ConfigError, Frame, GatewayConfig, GatewayError, HttpProvider, LatencyLog, MockProvider,
    ProviderConfig, ProviderError, RetryPolicy, VisionGateway, VisionProvider,
};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("bundle {bundle}: {source}")]
    Provider { bundle: String, source: ProviderError },
    #[error("bundle {bundle}: planning failed: {source}")]
    Plan { bundle: String, source: GatewayError },
}

enum Source {
    /// Each bundle's own `provider.json`.
    Mock,
    Live(Arc<dyn VisionProvider>),
}

/// Drives bundles through the pipeline with retries and corrective
/// feedback turned off.
pub struct Replayer {
    source: Source,
    config: GatewayConfig,
    assets: Arc<AssetLibrary>,
}

impl Replayer {
    pub fn mock() -> Self {
        let config = GatewayConfig { retry: RetryPolicy::one_shot(), ..GatewayConfig::default() };
        Replayer { source: Source::Mock, config, assets: Arc::new(AssetLibrary::builtin()) }
    }

    /// Fails before any replay when a configured key is missing.
    pub fn live(cfg: &ProviderConfig) -> Result<Self, ConfigError> {
        let provider = HttpProvider::from_config(cfg)?;
        let config = GatewayConfig { retry: RetryPolicy::one_shot(), ..cfg.gateway_config() };
        Ok(Replayer { source: Source::Live(Arc::new(provider)), config, assets: Arc::new(AssetLibrary::builtin()) })
    }

    pub fn with_assets(mut self, assets: Arc<AssetLibrary>) -> Self {
        self.assets = assets;
        self
    }

    fn provider_for(&self, bundle: &FixtureBundle) -> Result<Arc<dyn VisionProvider>, ReplayError> {
        match &self.source {
            Source::Mock => MockProvider::from_dir(&bundle.dir)
                .map(|p| Arc::new(p) as Arc<dyn VisionProvider>)
                .map_err(|source| ReplayError::Provider { bundle: bundle.id().into(), source }),
            Source::Live(p) => Ok(p.clone()),
        }
    }

    /// One outcome per labeled step, in step order.
    pub async fn replay(&self, bundle: &FixtureBundle) -> Result<Vec<StepOutcome>, ReplayError> {
        let log = LatencyLog::new();
        let gateway = VisionGateway::new(self.provider_for(bundle)?, self.config).with_latency_log(log.clone());
        let compiler = Compiler::new(gateway.clone(), self.assets.clone());
        let initial = bundle.initial();
        let plan = gateway
            .request_task_plan(&bundle.manifest.query, &Frame::from(initial))
            .await
            .map_err(|source| ReplayError::Plan { bundle: bundle.id().into(), source })?
            .plan;
        log.take();

        let mut outcomes = Vec::with_capacity(bundle.manifest.steps.len());
        for (i, label) in bundle.manifest.steps.iter().enumerate() {
            let produced = plan.steps.get(i);
            let mut outcome = StepOutcome {
                bundle_id: bundle.id().into(),
                step_index: i,
                expected_type: label.expected_visual_type,
                category: label.category(),
                instruction_correct: label.instruction_correct && produced.is_some(),
                type_correct: produced.is_some_and(|s| s.visual_type == label.expected_visual_type),
                component_correct: produced
                    .is_some_and(|s| normalize_component(s.target()) == normalize_component(&label.expected_key_component)),
                guidance_correct: false,
                overall_correct: label.overall_correct,
                components: label.components.clone(),
                kinds: Vec::new(),
                error: None,
                timing: None,
                calls: Vec::new(),
            };
            let Some(step) = produced else {
                outcome.error = Some("plan has no such step".into());
                outcomes.push(outcome);
                continue;
            };
            match compiler.compile_step(initial, i, step, bundle.scene_for_step(i)).await {
                Ok(compiled) => {
                    let kinds = compiled.scene.kinds();
                    let kinds_ok = label.expected_kinds.as_ref().is_none_or(|k| *k == kinds);
                    outcome.guidance_correct = label.guidance_correct && kinds_ok;
                    outcome.kinds = kinds;
                    outcome.timing = Some(compiled.timing);
                }
                Err(e) => outcome.error = Some(e.to_string()),
            }
            outcome.calls = log
                .take()
                .into_iter()
                .filter_map(|s| Component::of_call(s.kind).map(|component| CallRecord { component, seconds: s.duration.as_secs_f64() }))
                .collect();
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }

    /// Replays every bundle concurrently. Outcomes are ordered by bundle
    /// id then step index.
    pub async fn replay_all(&self, bundles: &[FixtureBundle]) -> Result<Vec<StepOutcome>, ReplayError> {
        let results = join_all(bundles.iter().map(|b| self.replay(b))).await;
        let mut all = Vec::new();
        for r in results {
            all.extend(r?);
        }
        all.sort_by(|a, b| (&a.bundle_id, a.step_index).cmp(&(&b.bundle_id, b.step_index)));
        Ok(all)
    }
}
