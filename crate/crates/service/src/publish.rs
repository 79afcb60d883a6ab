//! At-least-once publishing of train reports to a webhook or an MQTT topic.
//!
//! Every payload is written to a durable outbox before the first attempt and
//! removed only once the endpoint has acknowledged it. Receivers can drop
//! repeats by the delivery id (the `X-Delivery-Id` header, or the outbox
//! envelope for MQTT where the payload is sent unchanged).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{watch, Mutex};
use tracing::{debug, info, warn};
use url::Url;

pub const DELIVERY_HEADER: &str = "X-Delivery-Id";
const MQTT_DEFAULT_PORT: u16 = 1883;
const MAX_MQTT_PACKET: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum PublishError {
    #[error("invalid endpoint {url:?}: {reason}")]
    InvalidEndpoint { url: String, reason: String },
    #[error("endpoint unreachable after {attempts} attempt(s), delivery {delivery_id} stays queued: {reason}")]
    Unreachable { delivery_id: String, attempts: u32, reason: String },
    #[error("outbox: {0}")]
    Outbox(#[from] io::Error),
    #[error("payload: {0}")]
    Payload(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Webhook(Url),
    Mqtt { host: String, port: u16, topic: String },
}

impl Endpoint {
    pub fn parse(text: &str) -> Result<Self, PublishError> {
        let bad = |reason: &str| PublishError::InvalidEndpoint { url: text.into(), reason: reason.into() };
        let url = Url::parse(text).map_err(|e| bad(&e.to_string()))?;
        match url.scheme() {
            "http" | "https" => {
                if url.host_str().is_none_or(str::is_empty) {
                    return Err(bad("missing host"));
                }
                Ok(Endpoint::Webhook(url))
            }
            "mqtt" => {
                let host = url.host_str().filter(|h| !h.is_empty()).ok_or_else(|| bad("missing host"))?;
                let topic = url.path().trim_start_matches('/');
                if topic.is_empty() || topic.contains(['+', '#']) || url.fragment().is_some() || url.query().is_some() {
                    return Err(bad("mqtt endpoint needs a concrete topic path"));
                }
                Ok(Endpoint::Mqtt {
                    host: host.to_string(),
                    port: url.port().unwrap_or(MQTT_DEFAULT_PORT),
                    topic: topic.to_string(),
                })
            }
            other => Err(bad(&format!("unsupported scheme {other:?}"))),
        }
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Webhook(url) => write!(f, "{url}"),
            Endpoint::Mqtt { host, port, topic } => write!(f, "mqtt://{host}:{port}/{topic}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub delivery_id: String,
    pub endpoint: String,
    pub attempts: u32,
    pub queued_ms: i64,
    pub delivered_ms: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OutboxItem {
    delivery_id: String,
    queued_ms: i64,
    attempts: u32,
    payload: serde_json::Value,
}

pub fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
}

pub struct Publisher {
    endpoint: Endpoint,
    outbox: PathBuf,
    http: reqwest::Client,
    timeout: Duration,
    lock: Mutex<()>,
}

impl Publisher {
    pub fn new(endpoint: Endpoint, outbox: impl Into<PathBuf>) -> Result<Self, PublishError> {
        let outbox = outbox.into();
        fs::create_dir_all(&outbox)?;
        let timeout = Duration::from_secs(10);
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PublishError::InvalidEndpoint { url: endpoint.to_string(), reason: e.to_string() })?;
        Ok(Publisher { endpoint, outbox, http, timeout, lock: Mutex::new(()) })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Queues the payload durably, then makes one delivery attempt.
    pub async fn publish(&self, payload: &impl Serialize) -> Result<DeliveryReceipt, PublishError> {
        let _guard = self.lock.lock().await;
        let item = OutboxItem {
            delivery_id: uuid::Uuid::new_v4().to_string(),
            queued_ms: now_ms(),
            attempts: 0,
            payload: serde_json::to_value(payload)?,
        };
        let path = self.item_path(&item);
        write_atomic(&path, &serde_json::to_vec(&item)?)?;
        self.attempt(item, &path).await
    }

    pub fn pending(&self) -> Result<usize, PublishError> {
        Ok(self.queued_paths()?.len())
    }

    /// One attempt for every queued item, oldest first.
    pub async fn retry_pending(&self) -> Result<Vec<Result<DeliveryReceipt, PublishError>>, PublishError> {
        let _guard = self.lock.lock().await;
        let mut results = Vec::new();
        for path in self.queued_paths()? {
            let item: OutboxItem =
                match fs::read(&path).map_err(PublishError::from).and_then(|b| Ok(serde_json::from_slice(&b)?)) {
                    Ok(item) => item,
                    Err(e) => {
                        warn!(path = %path.display(), error = %e, "skipping unreadable outbox item");
                        continue;
                    }
                };
            results.push(self.attempt(item, &path).await);
        }
        Ok(results)
    }

    /// Retries the outbox every `interval` until `shutdown` flips to true.
    pub async fn run_retry_loop(self: Arc<Self>, interval: Duration, mut shutdown: watch::Receiver<bool>) {
        loop {
            tokio::select! {
                _ = tokio::time::sleep(interval) => {}
                _ = shutdown.changed() => {}
            }
            if *shutdown.borrow() {
                break;
            }
            match self.retry_pending().await {
                Ok(results) => {
                    let delivered = results.iter().filter(|r| r.is_ok()).count();
                    if !results.is_empty() {
                        debug!(delivered, queued = results.len() - delivered, "outbox retry pass");
                    }
                }
                Err(e) => warn!(error = %e, "outbox retry pass failed"),
            }
        }
    }

    fn item_path(&self, item: &OutboxItem) -> PathBuf {
        self.outbox.join(format!("{:013}-{}.json", item.queued_ms, item.delivery_id))
    }

    fn queued_paths(&self) -> Result<Vec<PathBuf>, PublishError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.outbox)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        Ok(paths)
    }

    async fn attempt(&self, mut item: OutboxItem, path: &Path) -> Result<DeliveryReceipt, PublishError> {
        item.attempts += 1;
        let outcome = self.deliver(&item).await;
        match outcome {
            Ok(()) => {
                fs::remove_file(path)?;
                sync_dir(&self.outbox)?;
                info!(delivery_id = %item.delivery_id, attempts = item.attempts, endpoint = %self.endpoint, "delivered");
                Ok(DeliveryReceipt {
                    delivery_id: item.delivery_id,
                    endpoint: self.endpoint.to_string(),
                    attempts: item.attempts,
                    queued_ms: item.queued_ms,
                    delivered_ms: now_ms(),
                })
            }
            Err(reason) => {
                write_atomic(path, &serde_json::to_vec(&item)?)?;
                warn!(delivery_id = %item.delivery_id, attempts = item.attempts, %reason, "delivery failed, kept queued");
                Err(PublishError::Unreachable { delivery_id: item.delivery_id, attempts: item.attempts, reason })
            }
        }
    }

    async fn deliver(&self, item: &OutboxItem) -> Result<(), String> {
        match &self.endpoint {
            Endpoint::Webhook(url) => {
                let response = self
                    .http
                    .post(url.clone())
                    .timeout(self.timeout)
                    .header(DELIVERY_HEADER, &item.delivery_id)
                    .json(&item.payload)
                    .send()
                    .await
                    .map_err(|e| e.to_string())?;
                if response.status().is_success() {
                    Ok(())
                } else {
                    Err(format!("webhook answered {}", response.status()))
                }
            }
            Endpoint::Mqtt { host, port, topic } => {
                let body = serde_json::to_vec(&item.payload).map_err(|e| e.to_string())?;
                tokio::time::timeout(self.timeout, mqtt_publish(host, *port, topic, &item.delivery_id, body))
                    .await
                    .map_err(|_| "mqtt broker timed out".to_string())?
            }
        }
    }
}

async fn mqtt_publish(host: &str, port: u16, topic: &str, delivery_id: &str, body: Vec<u8>) -> Result<(), String> {
    let mut options = MqttOptions::new(format!("wagonline-{}", &delivery_id[..8.min(delivery_id.len())]), host, port);
    options.set_keep_alive(Duration::from_secs(30));
    options.set_max_packet_size(MAX_MQTT_PACKET, MAX_MQTT_PACKET);
    let (client, mut events) = AsyncClient::new(options, 4);
    client.publish(topic, QoS::AtLeastOnce, false, body).await.map_err(|e| e.to_string())?;
    loop {
        match events.poll().await {
            Ok(Event::Incoming(Packet::PubAck(_))) => break,
            Ok(_) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    let _ = client.disconnect().await;
    // flush the disconnect; the broker may already have closed the socket
    let _ = tokio::time::timeout(Duration::from_millis(200), events.poll()).await;
    Ok(())
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    fs::File::open(dir)?.sync_all()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    sync_dir(path.parent().unwrap_or(Path::new(".")))
}
