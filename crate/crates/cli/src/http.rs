//! Minimal HTTP/1.1 front for [`Api::handle`]: GET only, one request per
//! connection, handled in arrival order.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use sitestream_core::api::{Api, ApiRequest, ApiResponse};

const READ_TIMEOUT: Duration = Duration::from_secs(5);

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        _ => "Error",
    }
}

fn write_response(stream: &mut TcpStream, r: &ApiResponse) -> std::io::Result<()> {
    write!(
        stream,
        "HTTP/1.1 {} {}\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        r.status,
        reason(r.status),
        r.content_type,
        r.body.len()
    )?;
    stream.write_all(&r.body)?;
    stream.flush()
}

fn serve_one(api: &Api, mut stream: TcpStream) -> std::io::Result<()> {
    stream.set_read_timeout(Some(READ_TIMEOUT))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    // drain headers; bodies are never read
    let mut header = String::new();
    while reader.read_line(&mut header)? > 0 && header.trim_end() != "" {
        header.clear();
    }
    let mut parts = line.split_whitespace();
    let response = match (parts.next(), parts.next()) {
        (Some(method), Some(target)) => api.handle(&ApiRequest::new(method, target)),
        _ => ApiResponse { status: 400, content_type: "text/plain", body: b"malformed request line\n".to_vec() },
    };
    write_response(&mut stream, &response)
}

/// Serves until `max_requests` connections have been answered, or forever.
pub fn serve(api: &Api, listener: TcpListener, max_requests: Option<usize>) -> std::io::Result<()> {
    for (served, stream) in listener.incoming().enumerate() {
        match stream {
            Ok(s) => {
                if let Err(e) = serve_one(api, s) {
                    eprintln!("connection error: {e}");
                }
            }
            Err(e) => eprintln!("accept error: {e}"),
        }
        if max_requests.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(())
}
