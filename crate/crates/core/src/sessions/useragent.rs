//! Reduction of raw user-agent strings to a small summary record.

use serde::{Deserialize, Serialize};

/// Substrings (lowercase) that mark automated clients.
pub const DEFAULT_BOT_DENYLIST: &[&str] = &[
    "bot",
    "crawler",
    "spider",
    "slurp",
    "headless",
    "curl/",
    "wget/",
    "python-requests",
    "scrapy",
    "phantomjs",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAgentSummary {
    pub browser_family: String,
    pub os_family: String,
    pub is_bot: bool,
}

impl UserAgentSummary {
    pub fn parse(raw: &str) -> Self {
        Self::parse_with_denylist(raw, DEFAULT_BOT_DENYLIST)
    }

    pub fn parse_with_denylist(raw: &str, denylist: &[&str]) -> Self {
        let lower = raw.to_ascii_lowercase();
        let is_bot = denylist.iter().any(|needle| lower.contains(needle));
        UserAgentSummary {
            browser_family: browser_family(&lower).to_string(),
            os_family: os_family(&lower).to_string(),
            is_bot,
        }
    }
}

// Order matters: Edge and Opera also advertise Chrome, Chrome advertises Safari.
fn browser_family(ua: &str) -> &'static str {
    if ua.contains("edg/") || ua.contains("edge/") {
        "edge"
    } else if ua.contains("opr/") || ua.contains("opera") {
        "opera"
    } else if ua.contains("firefox/") || ua.contains("fxios/") {
        "firefox"
    } else if ua.contains("chrome/") || ua.contains("crios/") {
        "chrome"
    } else if ua.contains("safari/") {
        "safari"
    } else if ua.contains("msie") || ua.contains("trident/") {
        "ie"
    } else {
        "other"
    }
}

fn os_family(ua: &str) -> &'static str {
    if ua.contains("android") {
        "android"
    } else if ua.contains("iphone") || ua.contains("ipad") || ua.contains("ios") {
        "ios"
    } else if ua.contains("windows") {
        "windows"
    } else if ua.contains("mac os x") || ua.contains("macintosh") {
        "macos"
    } else if ua.contains("linux") || ua.contains("x11") {
        "linux"
    } else {
        "other"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desktop_browsers() {
        let chrome = UserAgentSummary::parse(
            "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/120.0 Safari/537.36",
        );
        assert_eq!(chrome.browser_family, "chrome");
        assert_eq!(chrome.os_family, "windows");
        assert!(!chrome.is_bot);

        let ff = UserAgentSummary::parse(
            "Mozilla/5.0 (X11; Linux x86_64; rv:121.0) Gecko/20100101 Firefox/121.0",
        );
        assert_eq!(ff.browser_family, "firefox");
        assert_eq!(ff.os_family, "linux");
    }

    #[test]
    fn bots_are_flagged() {
        let bot = UserAgentSummary::parse(
            "Mozilla/5.0 (compatible; Googlebot/2.1; +http://www.google.com/bot.html)",
        );
        assert!(bot.is_bot);
        assert!(UserAgentSummary::parse("curl/8.4.0").is_bot);
        assert!(UserAgentSummary::parse("Mozilla/5.0 HeadlessChrome/119.0").is_bot);
    }
}
