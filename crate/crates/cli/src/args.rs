//! Hadoop-streaming style flags: single dash, one value each, any order.

use thiserror::Error;

use mrs_core::engine::TEXT_INPUT_FORMATS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamingArgs {
    pub input_format: String,
    pub input: String,
    pub output: String,
    pub mapper: String,
    pub reducer: Option<String>,
    /// Local paths, in command-line order.
    pub files: Vec<String>,
    pub num_reduce_tasks: usize,
    pub job_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArgsError {
    #[error("missing required flag {0}")]
    MissingRequired(&'static str),
    #[error("unknown flag {0}")]
    UnknownFlag(String),
    #[error("bad value for {flag}: {reason}")]
    BadValue { flag: &'static str, reason: String },
}

const FLAGS: [&str; 8] = [
    "-inputformat",
    "-input",
    "-output",
    "-mapper",
    "-reducer",
    "-file",
    "-numReduceTasks",
    "-jobname",
];

pub fn parse_streaming_args<S: AsRef<str>>(argv: &[S]) -> Result<StreamingArgs, ArgsError> {
    let mut single: [Option<String>; 8] = Default::default();
    let mut files = Vec::new();
    let mut it = argv.iter().map(AsRef::as_ref);
    while let Some(arg) = it.next() {
        let slot = FLAGS
            .iter()
            .position(|f| *f == arg)
            .ok_or_else(|| ArgsError::UnknownFlag(arg.to_owned()))?;
        let flag = FLAGS[slot];
        let value = it.next().ok_or_else(|| ArgsError::BadValue {
            flag,
            reason: "missing value".into(),
        })?;
        if flag == "-file" {
            files.push(value.to_owned());
        } else if single[slot].replace(value.to_owned()).is_some() {
            return Err(ArgsError::BadValue {
                flag,
                reason: "given more than once".into(),
            });
        }
    }
    let [input_format, input, output, mapper, reducer, _, reducers, job_name] = single;

    let input_format = input_format.unwrap_or_else(|| TEXT_INPUT_FORMATS[0].to_owned());
    if !TEXT_INPUT_FORMATS.contains(&input_format.as_str()) {
        return Err(ArgsError::BadValue {
            flag: "-inputformat",
            reason: format!("{input_format:?} is not a supported input format; use {} or text", TEXT_INPUT_FORMATS[0]),
        });
    }
    let num_reduce_tasks = match reducers {
        None => 1,
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                return Err(ArgsError::BadValue {
                    flag: "-numReduceTasks",
                    reason: format!("{v:?} is not a positive integer"),
                })
            }
        },
    };
    for (flag, v) in [("-mapper", &mapper), ("-reducer", &reducer)] {
        if v.as_deref().is_some_and(|c| c.trim().is_empty()) {
            return Err(ArgsError::BadValue {
                flag,
                reason: "empty command".into(),
            });
        }
    }
    Ok(StreamingArgs {
        input: input.ok_or(ArgsError::MissingRequired("-input"))?,
        output: output.ok_or(ArgsError::MissingRequired("-output"))?,
        mapper: mapper.ok_or(ArgsError::MissingRequired("-mapper"))?,
        input_format,
        reducer,
        files,
        num_reduce_tasks,
        job_name,
    })
}
