//! Driving a [`SessionClient`] against a remote server over the binary protocol.

use std::io;
use std::net::{SocketAddr, TcpStream};

use super::message::{read_message, write_message, EndReason, Message, Role, PROTOCOL_VERSION};
use super::session::SessionClient;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteEpisode {
    pub end_reason: EndReason,
    pub end_tick: u64,
    pub observations: u64,
    pub chunks_sent: u64,
}

/// An open, handshaken connection.
pub struct RemoteSession {
    stream: TcpStream,
    pub server_name: String,
}

impl RemoteSession {
    pub fn connect(addr: SocketAddr, role: Role, name: &str) -> io::Result<RemoteSession> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        write_message(
            &mut stream,
            &Message::Hello {
                protocol: PROTOCOL_VERSION,
                role,
                name: name.to_string(),
            },
        )?;
        match read_message(&mut stream)? {
            Some(Message::Hello { protocol, name, .. }) if protocol == PROTOCOL_VERSION => Ok(RemoteSession {
                stream,
                server_name: name,
            }),
            Some(Message::Hello { protocol, .. }) => Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("server speaks protocol {protocol}, client {PROTOCOL_VERSION}"),
            )),
            _ => Err(io::Error::new(io::ErrorKind::InvalidData, "no Hello from server")),
        }
    }

    pub fn send(&mut self, msg: &Message) -> io::Result<()> {
        write_message(&mut self.stream, msg)
    }

    /// Starts an episode with `start` (Reset or LoadState) and plays it with `client`
    /// until the server ends it.
    pub fn play(&mut self, start: &Message, client: &mut dyn SessionClient) -> io::Result<RemoteEpisode> {
        self.send(start)?;
        let mut observations = 0;
        let mut chunks_sent = 0;
        loop {
            let Some(msg) = read_message(&mut self.stream)? else {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed mid-episode"));
            };
            match msg {
                Message::Observation(o) => {
                    observations += 1;
                    if let Some(chunk) = client.on_observation(&o) {
                        self.send(&Message::Action(chunk))?;
                        chunks_sent += 1;
                    }
                }
                Message::EndEpisode { tick, reason } => {
                    return Ok(RemoteEpisode {
                        end_reason: reason,
                        end_tick: tick,
                        observations,
                        chunks_sent,
                    })
                }
                m @ (Message::Instruction { .. } | Message::Interrupt { .. } | Message::Reset { .. }) => client.on_control(&m),
                _ => {}
            }
        }
    }

    pub fn close(mut self) -> io::Result<()> {
        let _ = self.send(&Message::EndEpisode {
            tick: 0,
            reason: EndReason::Requested,
        });
        self.stream.shutdown(std::net::Shutdown::Both)
    }
}
