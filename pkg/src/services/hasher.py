"""Hasherサービス - 設定・コード・ファイルのハッシュ計算"""

import hashlib
import json
import logging
from collections.abc import Iterable, Mapping
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Union

import xxhash

logger = logging.getLogger(__name__)

DEFAULT_ALGORITHM = "xxhash64"
DEFAULT_CHUNK_SIZE = 64 * 1024


class Hasher:
    """コンテンツダイジェストを計算するサービスクラス

    実行設定のハッシュ (チェックポイントとマニフェストに保存) と、
    パッケージソースのハッシュ (コードバージョン) を提供する。
    """

    def __init__(
        self,
        hash_algorithm: str = DEFAULT_ALGORITHM,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
    ) -> None:
        """Hasherを初期化する

        Args:
            hash_algorithm: ``xxhash64`` または hashlib がサポートするアルゴリズム。
            chunk_size: ファイル読み込みのチャンクサイズ(バイト単位)。
        """
        if chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        self.hash_algorithm = hash_algorithm
        self.chunk_size = chunk_size
        self._validate_hash_algorithm()

    def _validate_hash_algorithm(self) -> None:
        """ハッシュアルゴリズムが有効か検証する"""
        if self.hash_algorithm == "xxhash64":
            return
        if self.hash_algorithm not in hashlib.algorithms_available:
            raise ValueError(f"Unsupported hash algorithm: {self.hash_algorithm}")

    def _get_hash_object(self) -> Any:
        if self.hash_algorithm == "xxhash64":
            return xxhash.xxh64()
        return hashlib.new(self.hash_algorithm)

    def hash_bytes(self, data: bytes) -> str:
        """バイト列のハッシュ(16進数文字列)"""
        hash_obj = self._get_hash_object()
        hash_obj.update(data)
        return hash_obj.hexdigest()

    def hash_config(self, config: Mapping[str, Any]) -> str:
        """設定辞書の正規化JSONをハッシュする

        キー順序に依存しないよう ``sort_keys`` で直列化する。
        """
        canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
        return self.hash_bytes(canonical.encode("utf-8"))

    def hash_file(self, file_path: Union[str, Path]) -> str:
        """ファイル全体のハッシュを計算する

        Raises:
            FileNotFoundError: ファイルが存在しない場合
            OSError: ファイル読み込みエラーの場合
        """
        path = Path(file_path)
        if not path.exists():
            raise FileNotFoundError(f"File not found: {file_path}")
        try:
            hash_obj = self._get_hash_object()
            with open(path, "rb") as f:
                while chunk := f.read(self.chunk_size):
                    hash_obj.update(chunk)
            return hash_obj.hexdigest()
        except OSError as e:
            raise OSError(f"Failed to read file {file_path}: {e}") from e

    def hash_files_parallel(
        self, paths: Iterable[Union[str, Path]], max_workers: int = 4
    ) -> dict[str, str]:
        """複数ファイルのハッシュを並列に計算する。

        1ファイルでエラーが発生しても処理を継続し、警告ログのみを出力する。

        Args:
            paths: ハッシュ計算対象のパス。
            max_workers: ワーカースレッド数。デフォルトは4。

        Returns:
            読み込めたファイルのパス文字列 → ハッシュ値。
        """
        targets = [str(p) for p in paths]
        digests: dict[str, str] = {}
        if not targets:
            return digests

        def _worker(path: str) -> tuple[str, str | None, Exception | None]:
            try:
                return (path, self.hash_file(path), None)
            except Exception as exc:  # noqa: BLE001
                return (path, None, exc)

        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = [executor.submit(_worker, path) for path in targets]
            for future in as_completed(futures):
                path, digest, exc = future.result()
                if exc is not None:
                    logger.warning("Failed to hash %s: %s", path, exc)
                    continue
                digests[path] = digest  # type: ignore[assignment]
        return digests

    def hash_tree(self, root: Union[str, Path], pattern: str = "*.py") -> str:
        """ディレクトリ配下のソースから決定的なコードバージョンを作る

        相対パスとファイルハッシュをパス順に連結してハッシュする。
        """
        base = Path(root)
        files = sorted(base.rglob(pattern))
        digests = self.hash_files_parallel(files)
        lines = [
            f"{path.relative_to(base).as_posix()}:{digests[str(path)]}"
            for path in files
            if str(path) in digests
        ]
        return self.hash_bytes("\n".join(lines).encode("utf-8"))
