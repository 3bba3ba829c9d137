//! Private information retrieval with side information.
//!
//! Three retrieval schemes are implemented end to end:
//!
//! * [`partition`]: single server, hides the demand index W, downloads
//!   ceil(K/(M+1)) messages.
//! * [`mds`]: single server, hides both W and the side-information set S,
//!   downloads K-M parity symbols of a systematic Cauchy MDS code.
//! * [`multi_server`]: N replicated non-colluding servers, hides W, runs the
//!   [`sun_jafar`] protocol over XOR super-messages.
//!
//! [`bounds`] holds the matching converse machinery and [`audit`] checks the
//! privacy claims exactly with rational arithmetic. [`wire`] and [`net`] put
//! the schemes behind a framed binary protocol.

pub mod audit;
pub mod bits;
pub mod bounds;
pub mod error;
pub mod gf;
pub mod mds;
pub mod model;
pub mod multi_server;
pub mod net;
pub mod partition;
pub mod sun_jafar;
pub mod wire;

pub use bits::BitString;
pub use error::{Error, Result};
pub use model::{Database, DemandSpec, ProblemParams, RateReport, SideInfo};
