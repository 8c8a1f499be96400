//! HTTP API over a directory of word-harvest collections.
//!
//! Every route lives under `/api/v1`. Label intake goes through each
//! collection's engine under a write lock; retraining runs in a background
//! worker that only holds the lock to plan and to commit, so reads never
//! wait for model training.

mod config;
mod error;
mod routes;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use wordharvest::harvest::{CycleReport, Engine};
use wordharvest::store::{self, Exports};
use wordharvest::Timestamp;

pub use config::ServiceConfig;
pub use error::{classify, ApiError, ApiResult};
pub use routes::router;

/// One collection: its engine and its exports.
pub struct Collection {
    pub id: String,
    pub engine: RwLock<Engine>,
    pub exports: Mutex<Exports>,
    /// Serializes cycles so plan and commit pair up.
    cycle: tokio::sync::Mutex<()>,
    export_requests: Mutex<BTreeMap<String, routes::ExportResponse>>,
}

impl Collection {
    pub fn new(id: &str, engine: Engine) -> wordharvest::Result<Self> {
        let exports = Exports::open(engine.root())?;
        Ok(Self {
            id: id.to_string(),
            engine: RwLock::new(engine),
            exports: Mutex::new(exports),
            cycle: tokio::sync::Mutex::new(()),
            export_requests: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn read(&self) -> std::sync::RwLockReadGuard<'_, Engine> {
        self.engine.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> std::sync::RwLockWriteGuard<'_, Engine> {
        self.engine.write().unwrap_or_else(|e| e.into_inner())
    }

    fn export_requests(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, routes::ExportResponse>> {
        self.export_requests.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Runs one cycle if a request is ready. Training happens outside the
    /// engine lock. Returns `None` when there was nothing to do.
    pub async fn run_cycle(self: &Arc<Self>, now: Timestamp, force: bool) -> wordharvest::Result<Option<CycleReport>> {
        let _guard = self.cycle.lock().await;
        let needs_prepare = {
            let e = self.read();
            if !force && e.queue().ready(now).next().is_none() {
                return Ok(None);
            }
            e.codebook().is_none() && e.zones().next().is_some()
        };
        if needs_prepare {
            let me = Arc::clone(self);
            join(tokio::task::spawn_blocking(move || me.write().prepare())).await?;
        }
        let plan = self.write().plan_cycle(now);
        let outcome = join(tokio::task::spawn_blocking(move || Ok(plan.execute()))).await?;
        let report = self.write().commit(outcome)?;
        if !report.classes_retrained.is_empty() || !report.failures.is_empty() {
            log::info!(
                "collection {} cycle {}: retrained {}, failed {}",
                self.id,
                report.cycle,
                report.classes_retrained.len(),
                report.failures.len()
            );
        }
        Ok(Some(report))
    }
}

async fn join<T>(h: tokio::task::JoinHandle<wordharvest::Result<T>>) -> wordharvest::Result<T> {
    h.await
        .unwrap_or_else(|e| Err(wordharvest::Error::Io(std::io::Error::other(e.to_string()))))
}

/// Milliseconds since the Unix epoch, or a fixed value set by tests.
#[derive(Clone, Default)]
pub struct Clock(Option<Arc<AtomicI64>>);

impl Clock {
    pub fn system() -> Self {
        Self(None)
    }

    pub fn manual(start: Timestamp) -> Self {
        Self(Some(Arc::new(AtomicI64::new(start))))
    }

    pub fn now(&self) -> Timestamp {
        match &self.0 {
            Some(t) => t.load(Ordering::SeqCst),
            None => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as Timestamp),
        }
    }

    /// Moves a manual clock forward; no effect on the system clock.
    pub fn advance(&self, ms: i64) {
        if let Some(t) = &self.0 {
            t.fetch_add(ms, Ordering::SeqCst);
        }
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    pub clock: Clock,
    collections: RwLock<BTreeMap<String, Arc<Collection>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig, clock: Clock) -> Self {
        Self {
            config,
            clock,
            collections: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens every collection below the configured root.
    pub fn open(config: ServiceConfig, clock: Clock) -> wordharvest::Result<Self> {
        let state = Self::new(config, clock);
        std::fs::create_dir_all(&state.config.root)?;
        let mut dirs: Vec<_> = std::fs::read_dir(&state.config.root)?
            .filter_map(|d| d.ok())
            .map(|d| d.path())
            .filter(|p| store::manifest_path(p).exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
            let (engine, report) = store::load(&dir)?;
            if let Some(t) = &report.torn_events {
                log::warn!("collection {id}: dropped torn event record at line {}", t.line);
            }
            log::info!("opened collection {id}: {} zones, {} events", engine.zones().count(), engine.events().len());
            state.insert(&id, engine)?;
        }
        Ok(state)
    }

    pub fn insert(&self, id: &str, engine: Engine) -> wordharvest::Result<Arc<Collection>> {
        let c = Arc::new(Collection::new(id, engine)?);
        self.collections.write().unwrap_or_else(|e| e.into_inner()).insert(id.to_string(), Arc::clone(&c));
        Ok(c)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Collection>> {
        self.collections.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    /// Collections sorted by id.
    pub fn all(&self) -> Vec<Arc<Collection>> {
        self.collections.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }

    /// Creates a collection, or returns the existing one with `false`.
    pub fn create(&self, id: &str) -> wordharvest::Result<(Arc<Collection>, bool)> {
        let mut map = self.collections.write().unwrap_or_else(|e| e.into_inner());
        if let Some(c) = map.get(id) {
            return Ok((Arc::clone(c), false));
        }
        let engine = store::create(&self.config.root.join(id), self.config.engine.clone())?;
        let c = Arc::new(Collection::new(id, engine)?);
        map.insert(id.to_string(), Arc::clone(&c));
        Ok((c, true))
    }

    /// One pass of the background worker over every collection.
    pub async fn tick(&self) {
        for c in self.all() {
            if let Err(e) = c.run_cycle(self.clock.now(), false).await {
                log::error!("collection {}: cycle failed: {e}", c.id);
            }
        }
    }

    /// Runs cycles until every queue is empty, pushing the clock past the
    /// debounce window. Bounded so a class that keeps failing cannot hang
    /// shutdown.
    pub async fn drain(&self) {
        for c in self.all() {
            let (cold_every, debounce) = {
                let e = c.read();
                (e.config().cold_every.max(1), e.config().debounce_ms.max(0))
            };
            let mut rounds = 0;
            while !c.read().queue().is_empty() && rounds < 2 * cold_every + 2 {
                let now = self.clock.now().saturating_add(debounce + 1);
                if let Err(e) = c.run_cycle(now, true).await {
                    log::error!("collection {}: drain failed: {e}", c.id);
                    break;
                }
                rounds += 1;
            }
            let left = c.read().queue().len();
            if left > 0 {
                log::warn!("collection {}: {left} requests left in the queue at shutdown", c.id);
            }
        }
    }
}

/// Binds, serves until Ctrl-C, then drains the recompute queues.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let addr = format!("{}:{}", config.bind, config.port);
    let interval = Duration::from_millis(config.cycle_interval_ms.max(1));
    let state = Arc::new(AppState::open(config, Clock::system()).map_err(std::io::Error::other)?);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on {}", listener.local_addr()?);

    let (stop_tx, mut stop_rx) = tokio::sync::watch::channel(false);
    let worker_state = Arc::clone(&state);
    let worker = tokio::spawn(async move {
        let mut ticker = tokio::time::interval(interval);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = ticker.tick() => worker_state.tick().await,
                _ = stop_rx.changed() => break,
            }
        }
    });

    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
    let _ = stop_tx.send(true);
    let _ = worker.await;
    state.drain().await;
    Ok(())
}

/// Loads a service configuration from an optional file plus the process
/// environment.
pub fn load_config(path: Option<&Path>) -> Result<ServiceConfig, String> {
    let base = match path {
        Some(p) => ServiceConfig::from_file(p)?,
        None => ServiceConfig::default(),
    };
    base.with_env(|k| std::env::var(k).ok())
}
