pub mod broker;
pub mod mailbox;
pub mod model;
pub mod decode;
pub mod metadata;
pub mod rts;
pub mod cep;
pub mod privacy;
pub mod sim;
pub mod api;
