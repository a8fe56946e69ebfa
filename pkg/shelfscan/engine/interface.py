"""
shelfscan
~~~~~~~~~

:license: MIT, see LICENSE for more details.
"""

import platform
from typing import Dict

import requests

from shelfscan import __version__
from shelfscan.engine import exception


class Fetcher:
    """Downloads scene and pattern images published over HTTP(S).

    Attributes:
        TIMEOUT (int): Seconds to wait for the server before giving up.
        SCHEMES (tuple): URL prefixes handled by :class:`Fetcher`.
        UA_PRODUCT (str): Product name used in the User-Agent header.

    Usage:

        >>> from shelfscan.engine.interface import Fetcher
        >>> Fetcher.is_remote("https://example.com/shelf.jpg")
        True
        >>> data = Fetcher.fetch("https://example.com/shelf.jpg")
    """

    TIMEOUT: int = 30
    SCHEMES: tuple = ("http://", "https://")
    UA_CLI: str = "ShelfscanCLI"
    UA_LIB: str = "ShelfscanPythonLib"
    UA_PRODUCT: str = UA_LIB

    @classmethod
    def is_remote(cls, source: str) -> bool:
        """Check if `source` names a remote image.

        Args:
            source (str): A path or URL.

        Returns:
            bool: `True` if `source` starts with a handled URL scheme.
        """

        return str(source).lower().startswith(cls.SCHEMES)

    @classmethod
    def fetch(cls, url: str) -> bytes:
        """Download the raw bytes of a remote image.

        Args:
            url (str): The http(s) URL of the image.

        Raises:
            ImageFetchError: If the server is unreachable or answers with
                an HTTP status of 4xx or 5xx.

        Returns:
            bytes: The undecoded response body.
        """

        try:
            response = requests.get(
                url,
                headers=cls._get_headers(),
                timeout=cls.TIMEOUT,
            )
        except requests.exceptions.RequestException as exc:
            raise exception.ImageFetchError(f"cannot reach {url}") from exc

        # if http response code is 4xx or 5xx
        if (response.status_code % 1000) // 100 in (4, 5):
            raise exception.ImageFetchError(
                f"{url} answered with HTTP {response.status_code}"
            )
        return response.content

    @classmethod
    def set_ua_product_name(cls, product: str) -> None:
        """Set User-Agent product name.

        Args:
            product (str): User-Agent product name.

        Raises:
            ValueError: If the invalid product name is passed.
        """

        if product not in (cls.UA_CLI, cls.UA_LIB):
            raise ValueError("product is not a valid name.")
        cls.UA_PRODUCT = product

    @classmethod
    def _get_user_agent(cls) -> str:
        """Generate User-Agent string for HTTP request header.

        Returns:
            str: User-Agent string.
        """

        platform_system: str = platform.system()
        platform_release: str = platform.release()
        platform_machine: str = platform.machine()
        # Rename macOS platform
        if platform_system == "Darwin":
            platform_system = "macOs"

        platform_full: str = platform_system
        if platform_release:
            # Shorten release info if contains hyphen
            platform_full += " " + platform_release.split("-", 1)[0]
        if platform_machine:
            if platform_machine == "AMD64":
                platform_machine = "x64"
            platform_full += "; " + platform_machine

        return f"{cls.UA_PRODUCT}/{__version__} ({platform_full})"

    @classmethod
    def _get_headers(cls) -> Dict[str, str]:
        """Build the HTTP header sent with every download.

        Returns:
            Dict[str, str]: The HTTP header.
        """

        return {
            "User-Agent": cls._get_user_agent(),
            "Accept": "image/png, image/jpeg, */*;q=0.5",
        }
