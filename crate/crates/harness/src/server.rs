//! HTTP variation service over a saved denoiser.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rediffuse_core::toy::MlpDenoiser;
use rediffuse_core::variation::remote::{
    decode_image, encode_image, ErrorResponse, HealthResponse, VariationRequest, VariationResponse,
};
use rediffuse_core::variation::{
    IntervalPolicy, LatentVariation, LinearCodec, LocalVariation, VariationEndpoint,
};
use tokio::sync::oneshot;

use crate::error::{HarnessError, Phase, PhaseExt};
use crate::runner::load_model;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub model_dir: PathBuf,
    pub bind: SocketAddr,
    /// DDIM interval; `t / 2` when absent.
    pub default_k: Option<usize>,
    /// Step used when a request omits `t`; `T / 5` when absent.
    pub default_t: Option<usize>,
    /// Linear codec directory enabling `latent: true` requests.
    pub codec_dir: Option<PathBuf>,
}

/// The model-side state shared by all request handlers.
pub struct VariationService {
    pixel: LocalVariation<Arc<MlpDenoiser>>,
    latent: Option<LatentVariation<Arc<MlpDenoiser>, LinearCodec>>,
    steps: usize,
    default_t: usize,
    input_len: usize,
    latent_image_len: Option<usize>,
}

impl VariationService {
    pub fn new(
        model: MlpDenoiser,
        default_k: Option<usize>,
        default_t: Option<usize>,
        codec: Option<LinearCodec>,
    ) -> Result<Self, HarnessError> {
        let sched = model.schedule().clone();
        let steps = sched.steps();
        let default_t = default_t.unwrap_or((steps / 5).max(1));
        if default_t == 0 || default_t > steps {
            return Err(HarnessError::Config(format!(
                "default t = {default_t} outside 1..={steps}"
            )));
        }
        if default_k == Some(0) {
            return Err(HarnessError::Config("default k must be at least 1".into()));
        }
        let interval = default_k.map_or(IntervalPolicy::HalfStep, IntervalPolicy::Fixed);
        let input_len = model.arch().data_len();
        let range = model.arch().pixel_range;
        let model = Arc::new(model);
        let latent_image_len = codec.as_ref().map(|c| c.image_shape().iter().product());
        let latent = match codec {
            Some(c) => Some(
                LatentVariation::new(model.clone(), c, sched.clone(), interval)
                    .map_err(|e| HarnessError::Config(e.to_string()))?,
            ),
            None => None,
        };
        Ok(Self {
            pixel: LocalVariation::new(model, sched, interval).with_pixel_range(range),
            latent,
            steps,
            default_t,
            input_len,
            latent_image_len,
        })
    }

    pub fn load(cfg: &ServerConfig) -> Result<Self, HarnessError> {
        let model = load_model(&cfg.model_dir).map_err(|e| HarnessError::Config(e.to_string()))?;
        let codec = match &cfg.codec_dir {
            Some(dir) => Some(LinearCodec::load(dir).map_err(|e| HarnessError::Config(e.to_string()))?),
            None => None,
        };
        Self::new(model, cfg.default_k, cfg.default_t, codec)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Validates a request and runs it; `Err` carries the HTTP status and message.
    pub fn handle(&self, req: &VariationRequest) -> Result<VariationResponse, (StatusCode, String)> {
        let bad = |msg: String| Err((StatusCode::BAD_REQUEST, msg));
        let t = req.t.unwrap_or(self.default_t);
        if t == 0 || t > self.steps {
            return bad(format!("t = {t} outside 1..={} (T = {})", self.steps, self.steps));
        }
        let x = match decode_image(&req.image) {
            Ok(x) => x,
            Err(e) => return bad(format!("image: {e}")),
        };
        let seed = req.seed.unwrap_or_else(rand::random);
        let out = if req.latent {
            let Some(latent) = &self.latent else {
                return bad("latent variation is not enabled on this server".into());
            };
            let want = self.latent_image_len.unwrap_or_default();
            if x.len() != want {
                return bad(format!(
                    "image has {} elements, latent codec expects {want}",
                    x.len()
                ));
            }
            latent.vary(&x, t, seed)
        } else {
            if x.len() != self.input_len {
                return bad(format!(
                    "image has {} elements, model expects {}",
                    x.len(),
                    self.input_len
                ));
            }
            self.pixel.vary(&x, t, seed)
        };
        match out {
            Ok(img) => Ok(VariationResponse {
                image: encode_image(&img),
            }),
            Err(e) => Err((StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        }
    }
}

fn error_response(status: StatusCode, error: String) -> Response {
    (status, Json(ErrorResponse { error })).into_response()
}

async fn health(State(svc): State<Arc<VariationService>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        steps: svc.steps,
    })
}

async fn variation(
    State(svc): State<Arc<VariationService>>,
    body: Result<Json<VariationRequest>, JsonRejection>,
) -> Response {
    let req = match body {
        Ok(Json(req)) => req,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.body_text()),
    };
    match tokio::task::spawn_blocking(move || svc.handle(&req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err((status, msg))) => error_response(status, msg),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn access_log(req: Request, next: Next) -> Response {
    let started = Instant::now();
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let resp = next.run(req).await;
    tracing::info!(
        target: "access",
        %method,
        path,
        status = resp.status().as_u16(),
        micros = started.elapsed().as_micros() as u64,
    );
    resp
}

pub fn router(svc: Arc<VariationService>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/variation", post(variation))
        .layer(middleware::from_fn(access_log))
        .with_state(svc)
}

fn bind(addr: SocketAddr) -> Result<std::net::TcpListener, HarnessError> {
    let listener = std::net::TcpListener::bind(addr)
        .map_err(|e| HarnessError::phase(Phase::Serve, format!("bind {addr}: {e}")))?;
    listener.set_nonblocking(true).phase(Phase::Serve)?;
    Ok(listener)
}

/// A server running on a background thread; dropping it shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `svc` until the handle is dropped.
pub fn spawn_server(svc: VariationService, addr: SocketAddr) -> Result<ServerHandle, HarnessError> {
    let listener = bind(addr)?;
    let addr = listener.local_addr().phase(Phase::Serve)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .phase(Phase::Serve)?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::new(svc));
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    tracing::error!("listener: {e}");
                    return;
                }
            };
            let stop = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(stop).await {
                tracing::error!("server: {e}");
            }
        });
    });
    Ok(ServerHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}

/// Serves in the foreground until ctrl-c.
pub fn serve_variation_api(cfg: &ServerConfig) -> Result<(), HarnessError> {
    let svc = Arc::new(VariationService::load(cfg)?);
    let listener = bind(cfg.bind)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .phase(Phase::Serve)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).phase(Phase::Serve)?;
        tracing::info!(addr = %listener.local_addr().phase(Phase::Serve)?, "serving");
        axum::serve(listener, router(svc))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await
            .phase(Phase::Serve)
    })
}
