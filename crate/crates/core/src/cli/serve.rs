use std::io::Write;
use std::path::Path;

use serde_json::json;

use crate::agent::REPORT_FILE;
use crate::registry::{RegistryError, TaskRegistry};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: String,
}

impl Response {
    fn json(status: u16, value: &serde_json::Value) -> Self {
        Self {
            status,
            body: serde_json::to_string_pretty(value).expect("json value serializes"),
        }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self::json(status, &json!({ "error": message.into() }))
    }
}

fn safe_segment(s: &str) -> bool {
    !s.is_empty() && s != "." && s != ".." && !s.contains(['/', '\\'])
}

/// Maps a request to a response. Routes:
/// `GET /tasks`, `GET /tasks/{id}/{facet}`, `GET /capabilities` and
/// `GET /runs/{run_id}/report`.
pub fn route(method: &str, url: &str, registry: &TaskRegistry, runs: &Path) -> Response {
    if method != "GET" {
        return Response::error(405, "only GET is supported");
    }
    let path = url.split('?').next().unwrap_or("");
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    match segments.as_slice() {
        ["tasks"] => Response::json(200, &json!(registry.task_ids())),
        ["capabilities"] => Response::json(200, &json!(registry.capabilities())),
        ["tasks", id, facet] => match registry.query_meta(id, facet) {
            Ok(v) => Response::json(200, &v),
            Err(e @ RegistryError::UnknownTask(_)) => Response::error(404, e.to_string()),
            Err(e) => Response::error(400, e.to_string()),
        },
        ["runs", run_id, "report"] if safe_segment(run_id) => {
            match std::fs::read_to_string(runs.join(run_id).join(REPORT_FILE)) {
                Ok(body) => Response { status: 200, body },
                Err(_) => Response::error(404, format!("no report for run {run_id:?}")),
            }
        }
        _ => Response::error(404, format!("no route for {path}")),
    }
}

/// Serves [`route`] until the process is stopped. Prints the bound
/// address on its first stdout line, so `127.0.0.1:0` can be used.
pub fn serve(addr: &str, registry: &TaskRegistry, runs: &Path) -> anyhow::Result<()> {
    let server = tiny_http::Server::http(addr).map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    println!("listening on http://{}", server.server_addr());
    std::io::stdout().flush()?;
    let content_type = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    for request in server.incoming_requests() {
        let r = route(request.method().as_str(), request.url(), registry, runs);
        let response = tiny_http::Response::from_string(r.body)
            .with_status_code(r.status)
            .with_header(content_type.clone());
        let _ = request.respond(response);
    }
    Ok(())
}
