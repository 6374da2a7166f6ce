"""
Run registry model: one row per CLI command invocation.
"""

from datetime import datetime
from functools import lru_cache
from pathlib import Path

from sqlalchemy import Column, DateTime, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from adagcl.config import settings

# Create declarative base
Base = declarative_base()


# Define RunRecord model
class RunRecord(Base):
    """Registry mirror of a run manifest."""

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(String, unique=True, index=True)
    command = Column(String, index=True)
    status = Column(String, default="running")
    output_dir = Column(String)
    config_json = Column(Text, nullable=True)
    checksum = Column(String, nullable=True)
    message = Column(Text, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)


@lru_cache(maxsize=None)
def get_engine(database_url: str):
    """Engine per URL; SQLite parent directories are created and tables ensured."""
    if database_url.startswith("sqlite:///"):
        Path(database_url[len("sqlite:///"):]).parent.mkdir(parents=True, exist_ok=True)
    engine = create_engine(database_url)
    Base.metadata.create_all(bind=engine)
    return engine


def session_factory(database_url: str = None):
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(database_url or settings.resolved_database_url()))


# Dependency to get DB session
def get_db(database_url: str = None):
    """Yield a registry session and close it afterwards."""
    db = session_factory(database_url)()
    try:
        yield db
    finally:
        db.close()
