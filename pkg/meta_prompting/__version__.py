#                 _                                                _   _
#  _ __ ___   ___| |_ __ _       _ __  _ __ ___  _ __ ___  _ __ | |_(_)_ __   __ _
# | '_ ` _ \ / _ \ __/ _` |_____| '_ \| '__/ _ \| '_ ` _ \| '_ \| __| | '_ \ / _` |
# | | | | | |  __/ || (_| |_____| |_) | | | (_) | | | | | | |_) | |_| | | | | (_| |
# |_| |_| |_|\___|\__\__,_|     | .__/|_|  \___/|_| |_| |_| .__/ \__|_|_| |_|\__, |
#                               |_|                       |_|                |___/

__title__ = "meta_prompting"
__description__ = (
    "Meta-learned soft-prompt initialization (MAML, FOMAML, Reptile, MSLB) for"
    " few-shot prompt-based text classification, with a desk-scale experiment harness."
)
__url__ = ""
__author__ = "Meta Prompting Developers"
__author_email__ = ""
__version__ = "1.0.0-0"
__status__ = "alpha"
__license__ = "BSD-3-Clause"
__license_url__ = "https://opensource.org/licenses/BSD-3-Clause"
